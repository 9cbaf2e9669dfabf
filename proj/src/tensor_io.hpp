#pragma once

// "VV1" binary tensor files:
//   magic "VVOL" | u32 version=1 | u8 dtype (0=f32, 1=u8) | u8 rank |
//   rank x u32 dims (C first when present, then H, W, D) | 3 x f32 spacing |
//   raw data. All integers and floats little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "volume.hpp"

namespace voxseed {

enum class DType : std::uint8_t { f32 = 0, u8 = 1 };

struct RawTensor {
    DType dtype = DType::f32;
    std::vector<std::uint32_t> dims;
    Spacing spacing{1.0f, 1.0f, 1.0f};
    std::vector<float> f32;
    std::vector<std::uint8_t> u8;

    std::size_t element_count() const;
};

std::vector<std::uint8_t> encode_vv1(const RawTensor& t);
RawTensor decode_vv1(const std::vector<std::uint8_t>& bytes);

void write_vv1(const std::filesystem::path& path, const RawTensor& t);
RawTensor read_vv1(const std::filesystem::path& path);

RawTensor to_raw(const Volume3D& v);
RawTensor to_raw(const Mask3D& m, const Spacing& spacing);
RawTensor to_raw(const FeatureMap& f, const Spacing& spacing);
RawTensor to_raw(const ProbMap& p, const Spacing& spacing);
RawTensor to_raw(const ScalarGrid& g, const Spacing& spacing);

Volume3D volume_from_raw(const RawTensor& t);
Mask3D mask_from_raw(const RawTensor& t);

inline void save_volume(const std::filesystem::path& p, const Volume3D& v) { write_vv1(p, to_raw(v)); }
inline void save_mask(const std::filesystem::path& p, const Mask3D& m, const Spacing& s) {
    write_vv1(p, to_raw(m, s));
}
inline Volume3D load_volume(const std::filesystem::path& p) { return volume_from_raw(read_vv1(p)); }
inline Mask3D load_mask(const std::filesystem::path& p) { return mask_from_raw(read_vv1(p)); }

// Little-endian primitives shared with the checkpoint format.
namespace le {
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t x);
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t x);
void put_f32(std::vector<std::uint8_t>& out, float x);

class Reader {
public:
    Reader(const std::vector<std::uint8_t>& bytes, std::string context)
        : bytes_(bytes), context_(std::move(context)) {}
    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    float f32();
    void raw(void* dst, std::size_t n);
    bool at_end() const { return pos_ == bytes_.size(); }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n);
    const std::vector<std::uint8_t>& bytes_;
    std::string context_;
    std::size_t pos_ = 0;
};
}  // namespace le

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace voxseed
