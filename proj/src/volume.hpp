#pragma once

// Dense voxel containers shared by every module. Layout is channel-major,
// then H-major with D fastest: element (c, i, j, k) lives at
// ((c * H + i) * W + j) * D + k.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace voxseed {

struct Dims {
    int h = 0;
    int w = 0;
    int d = 0;

    std::size_t voxels() const { return static_cast<std::size_t>(h) * w * d; }
    std::size_t index(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * w + j) * d + k;
    }
    bool contains(int i, int j, int k) const {
        return i >= 0 && j >= 0 && k >= 0 && i < h && j < w && k < d;
    }
    std::array<int, 3> coords(std::size_t v) const {
        int k = static_cast<int>(v % d);
        int j = static_cast<int>((v / d) % w);
        int i = static_cast<int>(v / (static_cast<std::size_t>(d) * w));
        return {i, j, k};
    }
    bool operator==(const Dims&) const = default;
    std::string str() const;
};

// Millimetres per voxel along (H, W, D).
using Spacing = std::array<float, 3>;

void check_dims(const Dims& dims);
void check_spacing(const Spacing& spacing);
void require_same_dims(const Dims& a, const Dims& b, const char* what);

struct Volume3D {
    Dims dims;
    Spacing spacing{1.0f, 1.0f, 1.0f};
    std::vector<float> data;

    Volume3D() = default;
    Volume3D(Dims dims, Spacing spacing, float fill = 0.0f);

    float& at(int i, int j, int k) { return data[dims.index(i, j, k)]; }
    float at(int i, int j, int k) const { return data[dims.index(i, j, k)]; }
};

struct Mask3D {
    Dims dims;
    std::vector<std::uint8_t> data;

    Mask3D() = default;
    explicit Mask3D(Dims dims, std::uint8_t fill = 0);

    std::size_t count() const;
    Mask3D complement() const;
    std::uint8_t at(int i, int j, int k) const { return data[dims.index(i, j, k)]; }
    std::uint8_t& at(int i, int j, int k) { return data[dims.index(i, j, k)]; }
    bool operator==(const Mask3D&) const = default;
};

template <class T>
struct ScalarGridT {
    Dims dims;
    std::vector<T> data;

    ScalarGridT() = default;
    explicit ScalarGridT(Dims dims, T fill = T(0)) : dims(dims), data(dims.voxels(), fill) {}
};
using ScalarGrid = ScalarGridT<float>;

template <class T>
struct FeatureMapT {
    int channels = 0;
    Dims dims;
    std::vector<T> data;

    FeatureMapT() = default;
    FeatureMapT(int channels, Dims dims, T fill = T(0))
        : channels(channels), dims(dims), data(static_cast<std::size_t>(channels) * dims.voxels(), fill) {}

    std::span<T> channel(int c) { return {data.data() + c * dims.voxels(), dims.voxels()}; }
    std::span<const T> channel(int c) const { return {data.data() + c * dims.voxels(), dims.voxels()}; }
    T& at(int c, std::size_t v) { return data[c * dims.voxels() + v]; }
    T at(int c, std::size_t v) const { return data[c * dims.voxels() + v]; }
};
using FeatureMap = FeatureMapT<float>;

// Two-class probability map: plane 0 holds p(background), plane 1 p(object).
template <class T>
struct ProbMapT {
    Dims dims;
    std::vector<T> data;

    ProbMapT() = default;
    explicit ProbMapT(Dims dims) : dims(dims), data(2 * dims.voxels(), T(0)) {}

    T p(int c, std::size_t v) const { return data[c * dims.voxels() + v]; }
    T& p(int c, std::size_t v) { return data[c * dims.voxels() + v]; }
};
using ProbMap = ProbMapT<float>;

Volume3D add_gaussian_noise(const Volume3D& v, double sigma, Rng& rng);

template <class T>
ProbMapT<T> softmax_over_classes(const FeatureMapT<T>& logits);

// Voxelwise argmax over classes; ties resolve to background.
template <class T>
Mask3D argmax_classes(const ProbMapT<T>& probs);

// Sum(values * mask) / Sum(mask), or exactly 0 for an empty mask.
template <class T>
T masked_mean(const ScalarGridT<T>& values, const Mask3D& mask);

void check_mask_values(const Mask3D& m);
void check_finite(const Volume3D& v, const char* what);

}  // namespace voxseed
