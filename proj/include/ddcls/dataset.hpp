#pragma once

#include "ddcls/random.hpp"
#include "ddcls/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ddcls::data {

inline constexpr std::size_t kNumClasses = 10;

struct ClassInfo {
    int id;
    std::string_view code;
    std::string_view label;
};

inline constexpr std::array<ClassInfo, kNumClasses> kClassTable{{
    {0, "c0", "Safe driving"},
    {1, "c1", "Texting - right hand"},
    {2, "c2", "Talking on the phone - right hand"},
    {3, "c3", "Texting - left hand"},
    {4, "c4", "Talking on the phone - left hand"},
    {5, "c5", "Operating the radio"},
    {6, "c6", "Drinking a beverage"},
    {7, "c7", "Reaching behind"},
    {8, "c8", "Hair and makeup"},
    {9, "c9", "Talking to passenger"},
}};

/// "c<id>" label text, or "class<id>" outside the table.
std::string class_label(std::size_t id);
std::string class_code(std::size_t id);

struct Sample {
    std::string path; // relative to the dataset root, '/' separated
    int class_id = 0;
    std::optional<std::string> subject;

    friend bool operator==(const Sample&, const Sample&) = default;
};

struct DatasetIndex {
    std::filesystem::path root;
    std::vector<Sample> samples;  // sorted by path
    std::vector<std::string> warnings;

    std::array<std::size_t, kNumClasses> class_counts() const;
    std::filesystem::path absolute(const Sample& s) const { return root / s.path; }
};

/// Walks <root>/c0..c9. Files without an image signature are skipped with a
/// warning. Subject ids come from `subjects_csv` (header subject,classname,img),
/// or from <root>/driver_imgs_list.csv or <root>/../driver_imgs_list.csv when present.
DatasetIndex scan(const std::filesystem::path& root,
                  const std::optional<std::filesystem::path>& subjects_csv = std::nullopt);

enum class SplitStrategy { StratifiedRandom, GroupedBySubject };

struct SplitSpec {
    double train = 0.70;
    double val = 0.15;
    double test = 0.15;
    std::uint64_t seed = 42;
    SplitStrategy strategy = SplitStrategy::StratifiedRandom;

    /// Throws DatasetError unless every ratio is > 0 and they sum to 1 (1e-6).
    void validate() const;
};

/// Parses "0.7,0.15,0.15".
SplitSpec parse_ratios(const std::string& text);

struct Split {
    std::vector<Sample> train;
    std::vector<Sample> val;
    std::vector<Sample> test;

    const std::vector<Sample>& part(std::string_view name) const;
};

/// Disjoint, exhaustive, seeded partition. Each part is sorted by path.
Split split(const DatasetIndex& index, const SplitSpec& spec);
Split split(const std::vector<Sample>& samples, const SplitSpec& spec);

/// Writes train.txt, val.txt and test.txt (one relative path per line).
void write_manifests(const Split& s, const std::filesystem::path& dir);

enum class FlipMode { Plain, SwapHandedLabels };

struct AugmentPolicy {
    double rotate_deg_max = 10.0;
    double hflip_prob = 0.0;
    double scale_min = 0.9;
    double scale_max = 1.1;
    FlipMode flip_mode = FlipMode::Plain;

    static AugmentPolicy identity() { return {0.0, 0.0, 1.0, 1.0, FlipMode::Plain}; }
};

struct Augmented {
    Tensor image;
    int class_id;
};

/// Rotation by `angle_deg` (counter-clockwise) and zoom by `scale` about the
/// image center, then an optional horizontal mirror. Bilinear sampling, edges replicated.
Tensor warp(const Tensor& t, double angle_deg, double scale, bool hflip);

/// Class remapping applied by a label-swapping flip (c1<->c3, c2<->c4).
int mirrored_class(int class_id);

/// Draws angle, scale and flip from `rng`. The label only changes for a flip
/// in SwapHandedLabels mode.
Augmented augment(const Tensor& t, int class_id, const AugmentPolicy& policy, Rng& rng);

} // namespace ddcls::data
