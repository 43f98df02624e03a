#pragma once

// DWT weight container.
//
//   "DWT1" | version u16 | meta_len u32 + JSON metadata | record count u32 |
//   per record: name_len u16, name, dtype u8 (0=f32, 1=f16), ndim u8, dims u32 x ndim, payload |
//   CRC32 of every preceding byte (u32).
//
// All integers are little-endian.

#include "ddcls/error.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace ddcls::weights {

inline constexpr std::uint16_t kFormatVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f16 = 1 };

std::size_t dtype_size(DType d);
const char* dtype_name(DType d);

struct TensorRecord {
    std::string name;
    DType dtype = DType::f32;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> payload; // little-endian raw values

    static TensorRecord from_floats(std::string name, std::vector<std::uint32_t> dims, std::span<const float> values,
                                    DType dtype = DType::f32);

    std::size_t numel() const;
    std::vector<float> to_floats() const;
    /// Same values re-encoded as `target`.
    TensorRecord converted(DType target) const;
};

struct Metadata {
    std::string arch = "yolov8n-cls";
    int nc = 10;
    double bn_eps = 1e-3;
    std::string normalization = "div255";

    friend bool operator==(const Metadata&, const Metadata&) = default;
};

class WeightStore {
public:
    Metadata metadata;

    /// Throws Error on a duplicate name or a payload that disagrees with dims.
    void insert(TensorRecord record);
    void insert_or_assign(TensorRecord record);
    bool contains(const std::string& name) const { return records_.contains(name); }
    const TensorRecord& at(const std::string& name) const;
    std::size_t size() const { return records_.size(); }
    bool empty() const { return records_.empty(); }

    const std::map<std::string, TensorRecord>& records() const { return records_; }

    /// CRC32 over names, dtypes, dims and payloads; keys feature caches.
    std::uint32_t checksum() const;

private:
    std::map<std::string, TensorRecord> records_;
};

class FormatError : public Error {
public:
    enum class Kind { BadMagic, VersionMismatch, CrcMismatch, Truncated, Malformed, Io };

    FormatError(Kind kind, const std::string& what) : Error(what), kind(kind) {}

    Kind kind;
};

const char* kind_name(FormatError::Kind kind);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// Serializes every record as `dtype`.
std::vector<std::uint8_t> save(const WeightStore& store, DType dtype);
WeightStore load(std::span<const std::uint8_t> bytes);

void save_file(const WeightStore& store, DType dtype, const std::filesystem::path& path);
WeightStore load_file(const std::filesystem::path& path);

/// Exact length of save(store, dtype) without producing it.
std::size_t model_size_bytes(const WeightStore& store, DType dtype);

} // namespace ddcls::weights
