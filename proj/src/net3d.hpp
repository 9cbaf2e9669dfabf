#pragma once

// Small 3D U-Net with an exact reverse pass.
//
// Layer plan for `levels` = L and base filters f:
//   encoder level i (0..L-1): conv3(in -> f*2^i) ReLU dropout, conv3 ReLU dropout,
//                             then 2x max-pool unless i is the bottleneck (L-1)
//   decoder level i (L-2..0): nearest 2x upsample, concat [upsampled, skip],
//                             conv3(-> f*2^i) ReLU dropout, conv3 ReLU dropout
//   output: conv1 (f -> 2 logits), no activation, no dropout
// The decoder level-0 output is the penultimate feature map (f channels).

#include <cstdint>
#include <string>
#include <vector>

#include "rng.hpp"
#include "volume.hpp"

namespace voxseed {

struct NetConfig {
    int in_channels = 1;
    int out_classes = 2;
    int levels = 3;
    int base_filters = 8;
    double dropout_rate = 0.15;

    void validate() const;
    int filters(int level) const { return base_filters << level; }
    // Spatial dims must be divisible by this.
    int divisor() const { return 1 << (levels - 1); }
    bool operator==(const NetConfig&) const = default;
};

template <class T>
struct Tensor {
    std::string name;
    std::vector<int> shape;
    std::vector<T> data;
};

// Ordered weight/bias tensors: for every conv layer "<layer>.weight" with
// shape [out, in, k, k, k] followed by "<layer>.bias" with shape [out].
template <class T>
struct NetParamsT {
    NetConfig config;
    std::vector<Tensor<T>> tensors;

    std::size_t parameter_count() const;
    const Tensor<T>& find(const std::string& name) const;
    Tensor<T>& find(const std::string& name);
    // Same layout, all zeros.
    NetParamsT zeros_like() const;
    template <class U>
    NetParamsT<U> cast() const;
};
using NetParams = NetParamsT<float>;

// Parameters of an arbitrary config, zero-filled, in canonical order.
template <class T>
NetParamsT<T> make_params(const NetConfig& config);

void require_same_layout(const auto& a, const auto& b, const char* what) {
    if (a.tensors.size() != b.tensors.size()) throw ShapeError(std::string(what) + ": tensor count mismatch");
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        if (a.tensors[i].shape != b.tensors[i].shape) {
            throw ShapeError(std::string(what) + ": shape mismatch at " + a.tensors[i].name);
        }
    }
}

struct AdamHyper {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
};

template <class T>
struct OptimizerStateT {
    AdamHyper hyper;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
    std::int64_t step = 0;

    static OptimizerStateT fresh(const NetParamsT<T>& params, AdamHyper hyper = {});
};
using OptimizerState = OptimizerStateT<float>;

enum class Mode { train, eval, mc_dropout };

template <class T>
struct LayerCache;

template <class T>
struct ForwardTrace {
    FeatureMapT<T> logits;
    FeatureMapT<T> penultimate;
    // Present only when the trace was recorded for a backward pass.
    std::vector<LayerCache<T>> layers;
    std::vector<std::vector<std::int32_t>> pool_argmax;
    bool recorded = false;

    ForwardTrace();
    ~ForwardTrace();
    ForwardTrace(ForwardTrace&&) noexcept;
    ForwardTrace& operator=(ForwardTrace&&) noexcept;
};

NetParams he_init(const NetConfig& config, Rng& rng);

// `record` keeps what backward needs; inference-only callers can skip it.
template <class T>
ForwardTrace<T> forward(const NetParamsT<T>& params, const Volume3D& x, Mode mode, Rng& rng, bool record = true);

// Same network, but ReLU gates and pooling winners are taken from a recorded
// trace instead of being recomputed. Equals forward() wherever the pattern
// still holds; used to difference along a single linear piece.
template <class T>
ForwardTrace<T> forward_pinned(const NetParamsT<T>& params, const Volume3D& x, Mode mode, Rng& rng,
                               const ForwardTrace<T>& pattern);

// Adds dL/dtheta into `grads`. Either cotangent may be empty (channels == 0).
template <class T>
void backward_accumulate(const NetParamsT<T>& params, const ForwardTrace<T>& trace, const FeatureMapT<T>& d_logits,
                         const FeatureMapT<T>& d_penultimate, NetParamsT<T>& grads);

template <class T>
NetParamsT<T> backward(const NetParamsT<T>& params, const ForwardTrace<T>& trace, const FeatureMapT<T>& d_logits,
                       const FeatureMapT<T>& d_penultimate) {
    NetParamsT<T> grads = params.zeros_like();
    backward_accumulate(params, trace, d_logits, d_penultimate, grads);
    return grads;
}

// Bias-corrected Adam. Throws TrainingDivergence naming the first parameter
// with a non-finite gradient; nothing is modified in that case.
template <class T>
void adam_step(NetParamsT<T>& params, const NetParamsT<T>& grads, OptimizerStateT<T>& state);

// teacher <- decay * teacher + (1 - decay) * student, elementwise.
template <class T>
void ema_update(NetParamsT<T>& teacher, const NetParamsT<T>& student, double decay);

// Sets the worker count used by the dense linear algebra (0 = hardware default).
void set_compute_threads(int threads);

}  // namespace voxseed
