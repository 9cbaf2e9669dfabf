#include "volume.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace voxseed {

std::string Dims::str() const {
    std::ostringstream os;
    os << h << "x" << w << "x" << d;
    return os.str();
}

void check_dims(const Dims& dims) {
    if (dims.h <= 0 || dims.w <= 0 || dims.d <= 0) {
        throw ShapeError("dims must be positive, got " + dims.str());
    }
}

void check_spacing(const Spacing& spacing) {
    for (float s : spacing) {
        if (!std::isfinite(s) || s <= 0.0f) {
            throw InvalidArgument("spacing components must be finite and > 0");
        }
    }
}

void require_same_dims(const Dims& a, const Dims& b, const char* what) {
    if (!(a == b)) {
        throw ShapeError(std::string(what) + ": dims mismatch " + a.str() + " vs " + b.str());
    }
}

Volume3D::Volume3D(Dims dims, Spacing spacing, float fill) : dims(dims), spacing(spacing) {
    check_dims(dims);
    check_spacing(spacing);
    data.assign(dims.voxels(), fill);
}

Mask3D::Mask3D(Dims dims, std::uint8_t fill) : dims(dims), data(dims.voxels(), fill) {
    check_dims(dims);
}

std::size_t Mask3D::count() const {
    return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

Mask3D Mask3D::complement() const {
    Mask3D out = *this;
    for (auto& x : out.data) x = x ? 0 : 1;
    return out;
}

void check_mask_values(const Mask3D& m) {
    if (m.data.size() != m.dims.voxels()) throw ShapeError("mask data length does not match dims");
    for (auto x : m.data) {
        if (x > 1) throw InvalidArgument("mask values must be 0 or 1");
    }
}

void check_finite(const Volume3D& v, const char* what) {
    for (float x : v.data) {
        if (!std::isfinite(x)) throw InvalidArgument(std::string(what) + " contains non-finite values");
    }
}

Volume3D add_gaussian_noise(const Volume3D& v, double sigma, Rng& rng) {
    if (!std::isfinite(sigma) || sigma < 0.0) {
        throw InvalidArgument("noise sigma must be finite and >= 0");
    }
    Volume3D out = v;
    if (sigma == 0.0) return out;
    std::normal_distribution<double> normal(0.0, sigma);
    for (float& x : out.data) x = static_cast<float>(x + normal(rng));
    return out;
}

template <class T>
ProbMapT<T> softmax_over_classes(const FeatureMapT<T>& logits) {
    if (logits.channels != 2) {
        throw ShapeError("softmax_over_classes expects 2 channels, got " + std::to_string(logits.channels));
    }
    const std::size_t n = logits.dims.voxels();
    ProbMapT<T> out(logits.dims);
    for (std::size_t v = 0; v < n; ++v) {
        T z0 = logits.data[v];
        T z1 = logits.data[n + v];
        T m = std::max(z0, z1);
        T e0 = std::exp(z0 - m);
        T e1 = std::exp(z1 - m);
        T s = e0 + e1;
        out.data[v] = e0 / s;
        out.data[n + v] = e1 / s;
    }
    return out;
}

template <class T>
Mask3D argmax_classes(const ProbMapT<T>& probs) {
    const std::size_t n = probs.dims.voxels();
    Mask3D out(probs.dims);
    for (std::size_t v = 0; v < n; ++v) out.data[v] = probs.data[n + v] > probs.data[v] ? 1 : 0;
    return out;
}

template <class T>
T masked_mean(const ScalarGridT<T>& values, const Mask3D& mask) {
    require_same_dims(values.dims, mask.dims, "masked_mean");
    // Accumulate in double in a fixed order so float and double builds agree.
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t v = 0; v < values.data.size(); ++v) {
        if (mask.data[v]) {
            sum += static_cast<double>(values.data[v]);
            ++count;
        }
    }
    if (count == 0) return T(0);
    return static_cast<T>(sum / static_cast<double>(count));
}

template ProbMapT<float> softmax_over_classes(const FeatureMapT<float>&);
template ProbMapT<double> softmax_over_classes(const FeatureMapT<double>&);
template Mask3D argmax_classes(const ProbMapT<float>&);
template Mask3D argmax_classes(const ProbMapT<double>&);
template float masked_mean(const ScalarGridT<float>&, const Mask3D&);
template double masked_mean(const ScalarGridT<double>&, const Mask3D&);

}  // namespace voxseed
