#include "ddcls/dataset.hpp"

#include "ddcls/error.hpp"
#include "ddcls/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace ddcls::data {

namespace {

std::string trim(std::string s)
{
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
        out.push_back(trim(cell));
    return out;
}

// (classname, image file name) -> subject id
std::map<std::pair<std::string, std::string>, std::string> read_subjects(const fs::path& csv)
{
    std::ifstream in(csv);
    if (!in)
        throw DatasetError("cannot open subject list " + csv.string());
    std::string line;
    if (!std::getline(in, line))
        throw DatasetError("subject list " + csv.string() + " is empty");
    const auto header = split_csv_line(line);
    const auto col = [&](std::string_view name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw DatasetError("subject list " + csv.string() + " lacks column '" + std::string(name) + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t subject = col("subject"), classname = col("classname"), img = col("img");
    std::map<std::pair<std::string, std::string>, std::string> out;
    while (std::getline(in, line)) {
        if (trim(line).empty())
            continue;
        const auto cells = split_csv_line(line);
        if (cells.size() <= std::max({subject, classname, img}))
            throw DatasetError("subject list " + csv.string() + ": short row '" + line + "'");
        out[{cells[classname], cells[img]}] = cells[subject];
    }
    return out;
}

std::optional<fs::path> find_subject_csv(const fs::path& root)
{
    for (const fs::path& candidate : {root / "driver_imgs_list.csv", root.parent_path() / "driver_imgs_list.csv"})
        if (fs::is_regular_file(candidate))
            return candidate;
    return std::nullopt;
}

std::vector<Sample> sorted(std::vector<Sample> v)
{
    std::sort(v.begin(), v.end(), [](const Sample& a, const Sample& b) { return a.path < b.path; });
    return v;
}

} // namespace

std::string class_code(std::size_t id)
{
    return id < kNumClasses ? std::string(kClassTable[id].code) : "class" + std::to_string(id);
}

std::string class_label(std::size_t id)
{
    return id < kNumClasses ? std::string(kClassTable[id].label) : "class" + std::to_string(id);
}

std::array<std::size_t, kNumClasses> DatasetIndex::class_counts() const
{
    std::array<std::size_t, kNumClasses> counts{};
    for (const Sample& s : samples)
        ++counts[static_cast<std::size_t>(s.class_id)];
    return counts;
}

DatasetIndex scan(const fs::path& root, const std::optional<fs::path>& subjects_csv)
{
    if (!fs::is_directory(root))
        throw DatasetError("dataset root " + root.string() + " is not a directory");
    DatasetIndex index;
    index.root = root;

    std::map<std::pair<std::string, std::string>, std::string> subjects;
    if (auto csv = subjects_csv ? subjects_csv : find_subject_csv(root))
        subjects = read_subjects(*csv);

    for (const ClassInfo& cls : kClassTable) {
        const fs::path dir = root / cls.code;
        if (!fs::is_directory(dir))
            throw DatasetError("missing class directory " + dir.string());
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file())
                continue;
            const std::string rel = std::string(cls.code) + "/" + entry.path().filename().string();
            std::ifstream in(entry.path(), std::ios::binary);
            std::array<std::uint8_t, 8> head{};
            in.read(reinterpret_cast<char*>(head.data()), head.size());
            const auto got = static_cast<std::size_t>(std::max<std::streamsize>(in.gcount(), 0));
            if (!in.good() && got == 0) {
                index.warnings.push_back("unreadable file skipped: " + rel);
                continue;
            }
            if (!image::has_image_signature(std::span(head).first(got))) {
                index.warnings.push_back("not an image, skipped: " + rel);
                continue;
            }
            Sample s{rel, cls.id, std::nullopt};
            if (auto it = subjects.find({std::string(cls.code), entry.path().filename().string()});
                it != subjects.end())
                s.subject = it->second;
            index.samples.push_back(std::move(s));
        }
    }
    index.samples = sorted(std::move(index.samples));
    return index;
}

void SplitSpec::validate() const
{
    if (!(train > 0.0) || !(val > 0.0) || !(test > 0.0))
        throw DatasetError("split ratios must all be positive");
    if (std::abs(train + val + test - 1.0) > 1e-6)
        throw DatasetError("split ratios must sum to 1, got " + std::to_string(train + val + test));
}

SplitSpec parse_ratios(const std::string& text)
{
    const auto cells = split_csv_line(text);
    if (cells.size() != 3)
        throw DatasetError("expected three comma-separated ratios, got '" + text + "'");
    SplitSpec spec;
    try {
        spec.train = std::stod(cells[0]);
        spec.val = std::stod(cells[1]);
        spec.test = std::stod(cells[2]);
    } catch (const std::exception&) {
        throw DatasetError("ratios are not numbers: '" + text + "'");
    }
    spec.validate();
    return spec;
}

const std::vector<Sample>& Split::part(std::string_view name) const
{
    if (name == "train")
        return train;
    if (name == "val")
        return val;
    if (name == "test")
        return test;
    throw DatasetError("unknown split '" + std::string(name) + "' (train, val or test)");
}

Split split(const DatasetIndex& index, const SplitSpec& spec) { return split(index.samples, spec); }

Split split(const std::vector<Sample>& input, const SplitSpec& spec)
{
    spec.validate();
    const std::vector<Sample> samples = sorted(input);
    Rng rng(spec.seed);
    Split out;

    if (spec.strategy == SplitStrategy::StratifiedRandom) {
        std::map<int, std::vector<const Sample*>> by_class;
        for (const Sample& s : samples)
            by_class[s.class_id].push_back(&s);
        for (auto& [cls, members] : by_class) {
            shuffle(members, rng);
            const std::size_t n = members.size();
            const auto n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(n * spec.train)));
            const auto n_val =
                std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::llround(n * spec.val)));
            for (std::size_t i = 0; i < n; ++i) {
                auto& dst = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
                dst.push_back(*members[i]);
            }
        }
    } else {
        std::map<std::string, std::vector<const Sample*>> by_subject;
        for (const Sample& s : samples) {
            if (!s.subject)
                throw DatasetError("grouped split needs subject ids; " + s.path + " has none");
            by_subject[*s.subject].push_back(&s);
        }
        std::vector<std::string> subjects;
        for (const auto& [subject, members] : by_subject)
            subjects.push_back(subject);
        shuffle(subjects, rng);

        const std::array<double, 3> ratios{spec.train, spec.val, spec.test};
        std::array<std::vector<Sample>*, 3> parts{&out.train, &out.val, &out.test};
        std::array<std::size_t, 3> filled{};
        const auto total = static_cast<double>(samples.size());
        for (const std::string& subject : subjects) {
            // Give the subject to the partition furthest below its target share.
            std::size_t best = 0;
            double best_deficit = -1e300;
            for (std::size_t p = 0; p < 3; ++p) {
                const double deficit = ratios[p] * total - static_cast<double>(filled[p]);
                if (deficit > best_deficit) {
                    best_deficit = deficit;
                    best = p;
                }
            }
            for (const Sample* s : by_subject[subject])
                parts[best]->push_back(*s);
            filled[best] += by_subject[subject].size();
        }
    }
    out.train = sorted(std::move(out.train));
    out.val = sorted(std::move(out.val));
    out.test = sorted(std::move(out.test));
    return out;
}

void write_manifests(const Split& s, const fs::path& dir)
{
    fs::create_directories(dir);
    for (const char* name : {"train", "val", "test"}) {
        std::ofstream out(dir / (std::string(name) + ".txt"), std::ios::trunc);
        for (const Sample& sample : s.part(name))
            out << sample.path << '\n';
        if (!out)
            throw DatasetError("cannot write manifest in " + dir.string());
    }
}

Tensor warp(const Tensor& t, double angle_deg, double scale, bool hflip)
{
    if (scale <= 0.0)
        throw ShapeError("warp: scale must be positive");
    const std::size_t h = t.h(), w = t.w();
    Tensor out(t.shape());
    const bool identity = angle_deg == 0.0 && scale == 1.0;
    const double rad = angle_deg * std::numbers::pi / 180.0;
    const double cos_a = std::cos(rad), sin_a = std::sin(rad);
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;

    for (std::size_t n = 0; n < t.n(); ++n)
        for (std::size_t c = 0; c < t.c(); ++c)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const std::size_t dst_x = hflip ? w - 1 - x : x;
                    if (identity) {
                        out.at(n, c, y, dst_x) = t.at(n, c, y, x);
                        continue;
                    }
                    // Inverse map: rotate the output offset by -angle (image y grows downwards) and unscale.
                    const double dx = static_cast<double>(x) - cx;
                    const double dy = static_cast<double>(y) - cy;
                    const double sx = std::clamp(cx + (cos_a * dx - sin_a * dy) / scale, 0.0, static_cast<double>(w - 1));
                    const double sy = std::clamp(cy + (sin_a * dx + cos_a * dy) / scale, 0.0, static_cast<double>(h - 1));
                    const auto x0 = static_cast<std::size_t>(std::floor(sx));
                    const auto y0 = static_cast<std::size_t>(std::floor(sy));
                    const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
                    const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
                    const double top = t.at(n, c, y0, x0) * (1 - fx) + t.at(n, c, y0, x1) * fx;
                    const double bot = t.at(n, c, y1, x0) * (1 - fx) + t.at(n, c, y1, x1) * fx;
                    out.at(n, c, y, dst_x) = static_cast<float>(top * (1 - fy) + bot * fy);
                }
    return out;
}

int mirrored_class(int class_id)
{
    switch (class_id) {
    case 1: return 3;
    case 3: return 1;
    case 2: return 4;
    case 4: return 2;
    default: return class_id;
    }
}

Augmented augment(const Tensor& t, int class_id, const AugmentPolicy& policy, Rng& rng)
{
    const double angle = policy.rotate_deg_max > 0.0 ? uniform(rng, -policy.rotate_deg_max, policy.rotate_deg_max) : 0.0;
    const double scale = policy.scale_max > policy.scale_min ? uniform(rng, policy.scale_min, policy.scale_max)
                                                             : policy.scale_min;
    const bool flip = policy.hflip_prob > 0.0 && uniform01(rng) < policy.hflip_prob;
    const int label = flip && policy.flip_mode == FlipMode::SwapHandedLabels ? mirrored_class(class_id) : class_id;
    return {warp(t, angle, scale, flip), label};
}

} // namespace ddcls::data
