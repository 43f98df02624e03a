#include "ddcls/weights.hpp"

#include "ddcls/half.hpp"

#include <json.hpp>
#include <zlib.h>

#include <bit>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>

namespace ddcls::weights {

namespace {

constexpr std::uint8_t kMagic[4] = {'D', 'W', 'T', '1'};
constexpr std::size_t kCrcSize = 4;

class Writer {
public:
    explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v)
    {
        for (int i = 0; i < 2; ++i)
            out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v)
    {
        for (int i = 0; i < 4; ++i)
            out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    void text(const std::string& s) { out_.insert(out_.end(), s.begin(), s.end()); }

private:
    std::vector<std::uint8_t>& out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    std::span<const std::uint8_t> take(std::size_t n, const char* what)
    {
        if (in_.size() - pos_ < n)
            throw FormatError(FormatError::Kind::Truncated,
                              std::string("DWT: truncated while reading ") + what + " at offset " +
                                  std::to_string(pos_));
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8(const char* what) { return take(1, what)[0]; }
    std::uint16_t u16(const char* what)
    {
        auto b = take(2, what);
        return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
    }
    std::uint32_t u32(const char* what)
    {
        auto b = take(4, what);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    std::size_t remaining() const { return in_.size() - pos_; }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

std::string metadata_json(const Metadata& m)
{
    nlohmann::json j;
    j["arch"] = m.arch;
    j["nc"] = m.nc;
    j["bn_eps"] = m.bn_eps;
    j["normalization"] = m.normalization;
    return j.dump();
}

Metadata parse_metadata(std::span<const std::uint8_t> bytes)
{
    try {
        const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
        Metadata m;
        m.arch = j.at("arch").get<std::string>();
        m.nc = j.at("nc").get<int>();
        m.bn_eps = j.at("bn_eps").get<double>();
        m.normalization = j.at("normalization").get<std::string>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatError::Kind::Malformed, std::string("DWT: bad metadata JSON: ") + e.what());
    }
}

std::size_t product(const std::vector<std::uint32_t>& dims)
{
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                            [](std::size_t a, std::uint32_t d) { return a * d; });
}

std::size_t record_header_size(const TensorRecord& r) { return 2 + r.name.size() + 1 + 1 + 4 * r.dims.size(); }

} // namespace

std::size_t dtype_size(DType d) { return d == DType::f16 ? 2 : 4; }
const char* dtype_name(DType d) { return d == DType::f16 ? "f16" : "f32"; }

const char* kind_name(FormatError::Kind kind)
{
    switch (kind) {
    case FormatError::Kind::BadMagic: return "bad_magic";
    case FormatError::Kind::VersionMismatch: return "version_mismatch";
    case FormatError::Kind::CrcMismatch: return "crc_mismatch";
    case FormatError::Kind::Truncated: return "truncated";
    case FormatError::Kind::Malformed: return "malformed";
    case FormatError::Kind::Io: return "io";
    }
    return "unknown";
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes)
{
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for very large inputs.
    constexpr std::size_t kChunk = 1u << 30;
    for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
        const std::size_t len = std::min(kChunk, bytes.size() - off);
        crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(len));
    }
    return static_cast<std::uint32_t>(crc);
}

TensorRecord TensorRecord::from_floats(std::string name, std::vector<std::uint32_t> dims,
                                       std::span<const float> values, DType dtype)
{
    if (product(dims) != values.size())
        throw ShapeError("record " + name + ": " + std::to_string(values.size()) + " values do not match dims");
    TensorRecord r;
    r.name = std::move(name);
    r.dtype = dtype;
    r.dims = std::move(dims);
    r.payload.reserve(values.size() * dtype_size(dtype));
    Writer w(r.payload);
    for (float v : values) {
        if (dtype == DType::f16)
            w.u16(f32_to_f16(v));
        else
            w.u32(std::bit_cast<std::uint32_t>(v));
    }
    return r;
}

std::size_t TensorRecord::numel() const { return product(dims); }

std::vector<float> TensorRecord::to_floats() const
{
    std::vector<float> out(numel());
    Reader r(payload);
    for (float& v : out)
        v = dtype == DType::f16 ? f16_to_f32(r.u16("payload")) : std::bit_cast<float>(r.u32("payload"));
    return out;
}

TensorRecord TensorRecord::converted(DType target) const
{
    if (target == dtype)
        return *this;
    return from_floats(name, dims, to_floats(), target);
}

void WeightStore::insert(TensorRecord record)
{
    if (records_.contains(record.name))
        throw Error("weight store: duplicate tensor name " + record.name);
    insert_or_assign(std::move(record));
}

void WeightStore::insert_or_assign(TensorRecord record)
{
    if (record.payload.size() != record.numel() * dtype_size(record.dtype))
        throw ShapeError("weight store: payload of " + record.name + " does not match its dims");
    if (record.name.size() > 0xFFFF || record.dims.size() > 0xFF)
        throw Error("weight store: name or rank too long for " + record.name);
    auto key = record.name;
    records_.insert_or_assign(std::move(key), std::move(record));
}

const TensorRecord& WeightStore::at(const std::string& name) const
{
    auto it = records_.find(name);
    if (it == records_.end())
        throw Error("weight store: no tensor named " + name);
    return it->second;
}

std::uint32_t WeightStore::checksum() const
{
    std::vector<std::uint8_t> buf;
    Writer w(buf);
    for (const auto& [name, r] : records_) {
        w.text(name);
        w.u8(static_cast<std::uint8_t>(r.dtype));
        for (auto d : r.dims)
            w.u32(d);
        w.bytes(r.payload);
    }
    return crc32(buf);
}

std::vector<std::uint8_t> save(const WeightStore& store, DType dtype)
{
    std::vector<std::uint8_t> out;
    out.reserve(model_size_bytes(store, dtype));
    Writer w(out);
    w.bytes(kMagic);
    w.u16(kFormatVersion);
    const std::string meta = metadata_json(store.metadata);
    w.u32(static_cast<std::uint32_t>(meta.size()));
    w.text(meta);
    w.u32(static_cast<std::uint32_t>(store.size()));
    for (const auto& [name, record] : store.records()) {
        const TensorRecord r = record.converted(dtype);
        w.u16(static_cast<std::uint16_t>(r.name.size()));
        w.text(r.name);
        w.u8(static_cast<std::uint8_t>(r.dtype));
        w.u8(static_cast<std::uint8_t>(r.dims.size()));
        for (auto d : r.dims)
            w.u32(d);
        w.bytes(r.payload);
    }
    w.u32(crc32(out));
    return out;
}

WeightStore load(std::span<const std::uint8_t> bytes)
{
    using Kind = FormatError::Kind;
    if (bytes.size() < sizeof(kMagic))
        throw FormatError(Kind::Truncated, "DWT: stream shorter than magic");
    if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
        throw FormatError(Kind::BadMagic, "DWT: bad magic");
    if (bytes.size() < sizeof(kMagic) + 2)
        throw FormatError(Kind::Truncated, "DWT: stream shorter than header");
    const auto version = static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
    if (version != kFormatVersion)
        throw FormatError(Kind::VersionMismatch, "DWT: unsupported version " + std::to_string(version) +
                                                     " (expected " + std::to_string(kFormatVersion) + ")");
    if (bytes.size() < sizeof(kMagic) + 2 + 4 + 4 + kCrcSize)
        throw FormatError(Kind::Truncated, "DWT: stream shorter than minimal file");

    const auto body = bytes.first(bytes.size() - kCrcSize);
    Reader trailer(bytes.last(kCrcSize));
    const std::uint32_t stored = trailer.u32("crc");
    if (crc32(body) != stored)
        throw FormatError(Kind::CrcMismatch, "DWT: CRC mismatch");

    Reader r(body);
    r.take(6, "header");
    const std::uint32_t meta_len = r.u32("metadata length");
    WeightStore store;
    store.metadata = parse_metadata(r.take(meta_len, "metadata"));
    const std::uint32_t count = r.u32("record count");
    for (std::uint32_t i = 0; i < count; ++i) {
        TensorRecord rec;
        const std::uint16_t name_len = r.u16("name length");
        const auto name = r.take(name_len, "name");
        rec.name.assign(name.begin(), name.end());
        const std::uint8_t dtype = r.u8("dtype");
        if (dtype > 1)
            throw FormatError(Kind::Malformed, "DWT: unknown dtype " + std::to_string(dtype) + " for " + rec.name);
        rec.dtype = static_cast<DType>(dtype);
        const std::uint8_t ndim = r.u8("ndim");
        rec.dims.resize(ndim);
        std::size_t elems = 1;
        for (auto& d : rec.dims) {
            d = r.u32("dims");
            if (d != 0 && elems > r.remaining() / d)
                throw FormatError(Kind::Truncated, "DWT: payload of " + rec.name + " exceeds stream");
            elems *= d;
        }
        const auto payload = r.take(elems * dtype_size(rec.dtype), "payload");
        rec.payload.assign(payload.begin(), payload.end());
        if (store.contains(rec.name))
            throw FormatError(Kind::Malformed, "DWT: duplicate tensor name " + rec.name);
        store.insert(std::move(rec));
    }
    if (r.remaining() != 0)
        throw FormatError(Kind::Malformed, "DWT: " + std::to_string(r.remaining()) + " trailing bytes");
    return store;
}

void save_file(const WeightStore& store, DType dtype, const std::filesystem::path& path)
{
    const auto bytes = save(store, dtype);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw FormatError(FormatError::Kind::Io, "DWT: cannot write " + path.string());
}

WeightStore load_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw FormatError(FormatError::Kind::Io, "DWT: cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return load(bytes);
}

std::size_t model_size_bytes(const WeightStore& store, DType dtype)
{
    std::size_t size = sizeof(kMagic) + 2 + 4 + metadata_json(store.metadata).size() + 4 + kCrcSize;
    for (const auto& [name, r] : store.records())
        size += record_header_size(r) + r.numel() * dtype_size(dtype);
    return size;
}

} // namespace ddcls::weights
