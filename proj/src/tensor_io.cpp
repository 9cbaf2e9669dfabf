#include "tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace voxseed {

namespace {
constexpr char kMagic[4] = {'V', 'V', 'O', 'L'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

namespace le {
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t x) {
    out.push_back(static_cast<std::uint8_t>(x));
    out.push_back(static_cast<std::uint8_t>(x >> 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t x) {
    for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(x >> s));
}
void put_f32(std::vector<std::uint8_t>& out, float x) { put_u32(out, std::bit_cast<std::uint32_t>(x)); }

void Reader::need(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw FormatError(context_ + ": truncated data");
}
std::uint8_t Reader::u8() {
    need(1);
    return bytes_[pos_++];
}
std::uint16_t Reader::u16() {
    need(2);
    std::uint16_t x = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return x;
}
std::uint32_t Reader::u32() {
    need(4);
    std::uint32_t x = 0;
    for (int b = 3; b >= 0; --b) x = (x << 8) | bytes_[pos_ + b];
    pos_ += 4;
    return x;
}
float Reader::f32() { return std::bit_cast<float>(u32()); }
void Reader::raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
}
}  // namespace le

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

std::size_t RawTensor::element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

std::vector<std::uint8_t> encode_vv1(const RawTensor& t) {
    if (t.dims.size() > 255) throw InvalidArgument("VV1 rank exceeds 255");
    const std::size_t n = t.element_count();
    if ((t.dtype == DType::f32 && t.f32.size() != n) || (t.dtype == DType::u8 && t.u8.size() != n)) {
        throw ShapeError("VV1 payload length does not match dims");
    }
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    le::put_u32(out, kVersion);
    out.push_back(static_cast<std::uint8_t>(t.dtype));
    out.push_back(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) le::put_u32(out, d);
    for (float s : t.spacing) le::put_f32(out, s);
    if (t.dtype == DType::f32) {
        out.reserve(out.size() + 4 * n);
        for (float x : t.f32) le::put_f32(out, x);
    } else {
        out.insert(out.end(), t.u8.begin(), t.u8.end());
    }
    return out;
}

RawTensor decode_vv1(const std::vector<std::uint8_t>& bytes) {
    le::Reader r(bytes, "VV1");
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("VV1: bad magic");
    if (auto v = r.u32(); v != kVersion) throw FormatError("VV1: unsupported version " + std::to_string(v));
    RawTensor t;
    auto code = r.u8();
    if (code > 1) throw FormatError("VV1: unknown dtype code " + std::to_string(code));
    t.dtype = static_cast<DType>(code);
    auto rank = r.u8();
    for (int i = 0; i < rank; ++i) t.dims.push_back(r.u32());
    for (auto& s : t.spacing) s = r.f32();
    const std::size_t n = t.element_count();
    const std::size_t width = t.dtype == DType::f32 ? 4 : 1;
    if (r.remaining() != n * width) throw FormatError("VV1: payload size does not match dims");
    if (t.dtype == DType::f32) {
        t.f32.resize(n);
        for (auto& x : t.f32) x = r.f32();
    } else {
        t.u8.resize(n);
        r.raw(t.u8.data(), n);
    }
    return t;
}

void write_vv1(const std::filesystem::path& path, const RawTensor& t) { write_file_bytes(path, encode_vv1(t)); }

RawTensor read_vv1(const std::filesystem::path& path) {
    try {
        return decode_vv1(read_file_bytes(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

namespace {
std::vector<std::uint32_t> spatial(const Dims& d) {
    return {static_cast<std::uint32_t>(d.h), static_cast<std::uint32_t>(d.w), static_cast<std::uint32_t>(d.d)};
}

Dims dims_from_tail(const std::vector<std::uint32_t>& dims) {
    const auto n = dims.size();
    return Dims{static_cast<int>(dims[n - 3]), static_cast<int>(dims[n - 2]), static_cast<int>(dims[n - 1])};
}
}  // namespace

RawTensor to_raw(const Volume3D& v) {
    RawTensor t;
    t.dtype = DType::f32;
    t.dims = spatial(v.dims);
    t.spacing = v.spacing;
    t.f32 = v.data;
    return t;
}

RawTensor to_raw(const Mask3D& m, const Spacing& spacing) {
    RawTensor t;
    t.dtype = DType::u8;
    t.dims = spatial(m.dims);
    t.spacing = spacing;
    t.u8 = m.data;
    return t;
}

RawTensor to_raw(const FeatureMap& f, const Spacing& spacing) {
    RawTensor t;
    t.dims = spatial(f.dims);
    t.dims.insert(t.dims.begin(), static_cast<std::uint32_t>(f.channels));
    t.spacing = spacing;
    t.f32 = f.data;
    return t;
}

RawTensor to_raw(const ProbMap& p, const Spacing& spacing) {
    RawTensor t;
    t.dims = spatial(p.dims);
    t.dims.insert(t.dims.begin(), 2u);
    t.spacing = spacing;
    t.f32 = p.data;
    return t;
}

RawTensor to_raw(const ScalarGrid& g, const Spacing& spacing) {
    RawTensor t;
    t.dims = spatial(g.dims);
    t.spacing = spacing;
    t.f32 = g.data;
    return t;
}

Volume3D volume_from_raw(const RawTensor& t) {
    if (t.dtype != DType::f32 || t.dims.size() != 3) throw FormatError("expected a rank-3 f32 volume");
    Volume3D v(dims_from_tail(t.dims), t.spacing);
    v.data = t.f32;
    check_finite(v, "volume");
    return v;
}

Mask3D mask_from_raw(const RawTensor& t) {
    if (t.dtype != DType::u8 || t.dims.size() != 3) throw FormatError("expected a rank-3 u8 mask");
    Mask3D m(dims_from_tail(t.dims));
    m.data = t.u8;
    check_mask_values(m);
    return m;
}

}  // namespace voxseed
