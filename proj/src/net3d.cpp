#include "net3d.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace voxseed {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using MapMat = Eigen::Map<Mat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const Mat<T>>;

// Activations are N x C column-major matrices, i.e. channel-major planes.
template <class T>
struct LayerCache {
    Dims dims;
    Mat<T> input;      // N x Cin
    Mat<T> activated;  // N x Cout after ReLU, before dropout; empty for the output conv
    Mat<T> drop;       // dropout scale per element; empty when dropout was inactive
};

template <class T>
ForwardTrace<T>::ForwardTrace() = default;
template <class T>
ForwardTrace<T>::~ForwardTrace() = default;
template <class T>
ForwardTrace<T>::ForwardTrace(ForwardTrace&&) noexcept = default;
template <class T>
ForwardTrace<T>& ForwardTrace<T>::operator=(ForwardTrace&&) noexcept = default;

void NetConfig::validate() const {
    if (in_channels != 1) throw InvalidArgument("in_channels must be 1");
    if (out_classes != 2) throw InvalidArgument("out_classes must be 2");
    if (levels < 2) throw InvalidArgument("levels must be >= 2");
    if (base_filters < 2) throw InvalidArgument("base_filters must be >= 2");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw InvalidArgument("dropout_rate must be in [0, 1)");
}

void set_compute_threads(int threads) { Eigen::setNbThreads(threads); }

// ---------------------------------------------------------------------------
// Parameter containers

namespace {

constexpr int kTaps = 27;

int conv_layer_count(int levels) { return 4 * levels - 1; }

int enc_layer(int level, int j) { return 2 * level + j; }
int dec_layer(int levels, int level, int j) { return 2 * levels + 2 * (levels - 2 - level) + j; }

}  // namespace

template <class T>
NetParamsT<T> make_params(const NetConfig& config) {
    config.validate();
    NetParamsT<T> p;
    p.config = config;
    const int L = config.levels;
    auto add = [&](const std::string& name, int out, int in, int k) {
        p.tensors.push_back({name + ".weight", {out, in, k, k, k},
                             std::vector<T>(static_cast<std::size_t>(out) * in * k * k * k, T(0))});
        p.tensors.push_back({name + ".bias", {out}, std::vector<T>(out, T(0))});
    };
    for (int i = 0; i < L; ++i) {
        int in = i == 0 ? config.in_channels : config.filters(i - 1);
        add("enc" + std::to_string(i) + ".conv0", config.filters(i), in, 3);
        add("enc" + std::to_string(i) + ".conv1", config.filters(i), config.filters(i), 3);
    }
    for (int i = L - 2; i >= 0; --i) {
        add("dec" + std::to_string(i) + ".conv0", config.filters(i), config.filters(i + 1) + config.filters(i), 3);
        add("dec" + std::to_string(i) + ".conv1", config.filters(i), config.filters(i), 3);
    }
    add("out", config.out_classes, config.filters(0), 1);
    return p;
}

template <class T>
std::size_t NetParamsT<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.data.size();
    return n;
}

template <class T>
const Tensor<T>& NetParamsT<T>::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return t;
    }
    throw IndexError("no parameter named " + name);
}

template <class T>
Tensor<T>& NetParamsT<T>::find(const std::string& name) {
    return const_cast<Tensor<T>&>(std::as_const(*this).find(name));
}

template <class T>
NetParamsT<T> NetParamsT<T>::zeros_like() const {
    NetParamsT out = *this;
    for (auto& t : out.tensors) std::fill(t.data.begin(), t.data.end(), T(0));
    return out;
}

template <class T>
template <class U>
NetParamsT<U> NetParamsT<T>::cast() const {
    NetParamsT<U> out;
    out.config = config;
    for (const auto& t : tensors) {
        out.tensors.push_back({t.name, t.shape, std::vector<U>(t.data.begin(), t.data.end())});
    }
    return out;
}

template <class T>
OptimizerStateT<T> OptimizerStateT<T>::fresh(const NetParamsT<T>& params, AdamHyper hyper) {
    OptimizerStateT s;
    s.hyper = hyper;
    for (const auto& t : params.tensors) {
        s.m.emplace_back(t.data.size(), T(0));
        s.v.emplace_back(t.data.size(), T(0));
    }
    return s;
}

NetParams he_init(const NetConfig& config, Rng& rng) {
    NetParams p = make_params<float>(config);
    for (auto& t : p.tensors) {
        if (t.shape.size() != 5) continue;  // biases stay zero
        const int fan_in = t.shape[1] * t.shape[2] * t.shape[3] * t.shape[4];
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
        for (auto& x : t.data) x = static_cast<float>(normal(rng));
    }
    return p;
}

// ---------------------------------------------------------------------------
// Kernels

namespace {

template <class T>
struct Workspace {
    std::vector<T> cols;
    std::vector<T> dcols;

    static Workspace& local() {
        thread_local Workspace ws;
        return ws;
    }
};

// cols(v, ci*27 + tap) = in(v shifted by tap, ci), zero outside the volume.
template <class T>
void im2col(const Mat<T>& in, const Dims& dims, MapMat<T>& cols) {
    const int H = dims.h, W = dims.w, D = dims.d;
    for (Eigen::Index ci = 0; ci < in.cols(); ++ci) {
        const T* src = in.col(ci).data();
        for (int tap = 0; tap < kTaps; ++tap) {
            const int di = tap / 9 - 1, dj = (tap / 3) % 3 - 1, dk = tap % 3 - 1;
            T* dst = cols.col(ci * kTaps + tap).data();
            for (int i = 0; i < H; ++i) {
                const int si = i + di;
                for (int j = 0; j < W; ++j) {
                    T* row = dst + (static_cast<std::size_t>(i) * W + j) * D;
                    const int sj = j + dj;
                    if (si < 0 || si >= H || sj < 0 || sj >= W) {
                        std::fill(row, row + D, T(0));
                        continue;
                    }
                    const T* srow = src + (static_cast<std::size_t>(si) * W + sj) * D;
                    if (dk == 0) {
                        std::copy(srow, srow + D, row);
                    } else if (dk < 0) {
                        row[0] = T(0);
                        std::copy(srow, srow + D - 1, row + 1);
                    } else {
                        std::copy(srow + 1, srow + D, row);
                        row[D - 1] = T(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add column gradients back onto the input planes.
template <class T>
void col2im(const MapMat<T>& dcols, const Dims& dims, Mat<T>& din) {
    const int H = dims.h, W = dims.w, D = dims.d;
    for (Eigen::Index ci = 0; ci < din.cols(); ++ci) {
        T* dst = din.col(ci).data();
        for (int tap = 0; tap < kTaps; ++tap) {
            const int di = tap / 9 - 1, dj = (tap / 3) % 3 - 1, dk = tap % 3 - 1;
            const T* src = dcols.col(ci * kTaps + tap).data();
            for (int i = 0; i < H; ++i) {
                const int si = i + di;
                if (si < 0 || si >= H) continue;
                for (int j = 0; j < W; ++j) {
                    const int sj = j + dj;
                    if (sj < 0 || sj >= W) continue;
                    const T* row = src + (static_cast<std::size_t>(i) * W + j) * D;
                    T* drow = dst + (static_cast<std::size_t>(si) * W + sj) * D;
                    const int k0 = std::max(0, -dk), k1 = std::min(D, D - dk);
                    for (int k = k0; k < k1; ++k) drow[k + dk] += row[k];
                }
            }
        }
    }
}

Dims half(const Dims& d) { return {d.h / 2, d.w / 2, d.d / 2}; }

template <class T>
Mat<T> max_pool(const Mat<T>& in, const Dims& dims, std::vector<std::int32_t>& argmax) {
    const Dims out_dims = half(dims);
    const auto n_out = static_cast<Eigen::Index>(out_dims.voxels());
    Mat<T> out(n_out, in.cols());
    argmax.assign(static_cast<std::size_t>(n_out * in.cols()), 0);
    for (Eigen::Index c = 0; c < in.cols(); ++c) {
        const T* src = in.col(c).data();
        for (int i = 0; i < out_dims.h; ++i) {
            for (int j = 0; j < out_dims.w; ++j) {
                for (int k = 0; k < out_dims.d; ++k) {
                    const auto o = static_cast<Eigen::Index>(out_dims.index(i, j, k));
                    T best = -std::numeric_limits<T>::infinity();
                    std::int32_t arg = 0;
                    for (int a = 0; a < 2; ++a) {
                        for (int b = 0; b < 2; ++b) {
                            for (int e = 0; e < 2; ++e) {
                                auto v = static_cast<std::int32_t>(dims.index(2 * i + a, 2 * j + b, 2 * k + e));
                                if (src[v] > best) {
                                    best = src[v];
                                    arg = v;
                                }
                            }
                        }
                    }
                    out(o, c) = best;
                    argmax[static_cast<std::size_t>(c * n_out + o)] = arg;
                }
            }
        }
    }
    return out;
}

// Plain sequential sums: Eigen's vectorised reductions pick their order from
// the buffer alignment, which would make bias gradients allocation-dependent.
template <class M, class T>
void add_column_sums(const M& m, std::vector<T>& out) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        T acc = T(0);
        for (Eigen::Index r = 0; r < m.rows(); ++r) acc += m(r, c);
        out[static_cast<std::size_t>(c)] += acc;
    }
}

template <class T>
Mat<T> pool_at(const Mat<T>& in, const Dims& dims, const std::vector<std::int32_t>& argmax) {
    const auto n_out = static_cast<Eigen::Index>(half(dims).voxels());
    Mat<T> out(n_out, in.cols());
    for (Eigen::Index c = 0; c < in.cols(); ++c) {
        for (Eigen::Index o = 0; o < n_out; ++o) out(o, c) = in(argmax[static_cast<std::size_t>(c * n_out + o)], c);
    }
    return out;
}

template <class T>
Mat<T> max_pool_backward(const Mat<T>& dout, const Dims& dims, const std::vector<std::int32_t>& argmax) {
    Mat<T> din = Mat<T>::Zero(static_cast<Eigen::Index>(dims.voxels()), dout.cols());
    const Eigen::Index n_out = dout.rows();
    for (Eigen::Index c = 0; c < dout.cols(); ++c) {
        for (Eigen::Index o = 0; o < n_out; ++o) {
            din(argmax[static_cast<std::size_t>(c * n_out + o)], c) += dout(o, c);
        }
    }
    return din;
}

template <class T>
Mat<T> upsample(const Mat<T>& in, const Dims& fine) {
    const Dims coarse = half(fine);
    Mat<T> out(static_cast<Eigen::Index>(fine.voxels()), in.cols());
    for (Eigen::Index c = 0; c < in.cols(); ++c) {
        for (int i = 0; i < fine.h; ++i) {
            for (int j = 0; j < fine.w; ++j) {
                for (int k = 0; k < fine.d; ++k) {
                    out(static_cast<Eigen::Index>(fine.index(i, j, k)), c) =
                        in(static_cast<Eigen::Index>(coarse.index(i / 2, j / 2, k / 2)), c);
                }
            }
        }
    }
    return out;
}

template <class T>
Mat<T> upsample_backward(const Mat<T>& dout, const Dims& fine) {
    const Dims coarse = half(fine);
    Mat<T> din = Mat<T>::Zero(static_cast<Eigen::Index>(coarse.voxels()), dout.cols());
    for (Eigen::Index c = 0; c < dout.cols(); ++c) {
        for (int i = 0; i < fine.h; ++i) {
            for (int j = 0; j < fine.w; ++j) {
                for (int k = 0; k < fine.d; ++k) {
                    din(static_cast<Eigen::Index>(coarse.index(i / 2, j / 2, k / 2)), c) +=
                        dout(static_cast<Eigen::Index>(fine.index(i, j, k)), c);
                }
            }
        }
    }
    return din;
}

template <class T>
Mat<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
    Mat<T> mask(rows, cols);
    const T scale = T(1.0 / (1.0 - rate));
    T* p = mask.data();
    for (Eigen::Index n = 0; n < rows * cols; ++n) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        p[n] = u < rate ? T(0) : scale;
    }
    return mask;
}

template <class T>
class UNetPass {
public:
    UNetPass(const NetParamsT<T>& params, Mode mode, Rng& rng, bool record, const ForwardTrace<T>* pattern = nullptr)
        : params_(params), cfg_(params.config), mode_(mode), rng_(rng), record_(record), pattern_(pattern) {}

    ForwardTrace<T> run(const Volume3D& x) {
        const int L = cfg_.levels;
        const int div = cfg_.divisor();
        if (x.dims.h % div || x.dims.w % div || x.dims.d % div) {
            throw ShapeError("input dims " + x.dims.str() + " not divisible by " + std::to_string(div));
        }
        check_dims(x.dims);
        ForwardTrace<T> trace;
        trace.recorded = record_;
        if (record_) trace.layers.resize(conv_layer_count(L));

        std::vector<Dims> dims(L);
        dims[0] = x.dims;
        for (int i = 1; i < L; ++i) dims[i] = half(dims[i - 1]);

        Mat<T> cur(static_cast<Eigen::Index>(x.dims.voxels()), 1);
        for (Eigen::Index v = 0; v < cur.rows(); ++v) cur(v, 0) = static_cast<T>(x.data[v]);

        std::vector<Mat<T>> skips(L);
        if (record_) trace.pool_argmax.resize(L - 1);
        std::vector<std::int32_t> scratch_argmax;
        for (int i = 0; i < L; ++i) {
            cur = conv_block(cur, dims[i], enc_layer(i, 0), trace);
            cur = conv_block(cur, dims[i], enc_layer(i, 1), trace);
            if (i < L - 1) {
                auto& argmax = record_ ? trace.pool_argmax[i] : scratch_argmax;
                skips[i] = cur;
                if (pattern_) {
                    argmax = pattern_->pool_argmax[i];
                    cur = pool_at(cur, dims[i], argmax);
                } else {
                    cur = max_pool(cur, dims[i], argmax);
                }
            }
        }
        for (int i = L - 2; i >= 0; --i) {
            Mat<T> up = upsample(cur, dims[i]);
            Mat<T> cat(up.rows(), up.cols() + skips[i].cols());
            cat << up, skips[i];
            cur = conv_block(cat, dims[i], dec_layer(L, i, 0), trace);
            cur = conv_block(cur, dims[i], dec_layer(L, i, 1), trace);
        }

        const int out_layer = conv_layer_count(L) - 1;
        const auto& w = params_.tensors[2 * out_layer];
        const auto& b = params_.tensors[2 * out_layer + 1];
        ConstMapMat<T> W(w.data.data(), cur.cols(), cfg_.out_classes);
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> B(b.data.data(), cfg_.out_classes);
        Mat<T> logits = cur * W;
        logits.rowwise() += B;

        trace.penultimate = to_feature_map(cur, dims[0]);
        trace.logits = to_feature_map(logits, dims[0]);
        if (record_) {
            auto& lc = trace.layers[out_layer];
            lc.dims = dims[0];
            lc.input = std::move(cur);
        }
        return trace;
    }

private:
    Mat<T> conv_block(const Mat<T>& in, const Dims& dims, int layer, ForwardTrace<T>& trace) {
        const auto& w = params_.tensors[2 * layer];
        const auto& b = params_.tensors[2 * layer + 1];
        const int cout = w.shape[0];
        const auto n = static_cast<Eigen::Index>(dims.voxels());
        const Eigen::Index k = in.cols() * kTaps;

        auto& ws = Workspace<T>::local();
        ws.cols.resize(static_cast<std::size_t>(n * k));
        MapMat<T> cols(ws.cols.data(), n, k);
        im2col(in, dims, cols);

        ConstMapMat<T> W(w.data.data(), k, cout);
        Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> B(b.data.data(), cout);
        Mat<T> out(n, cout);
        out.noalias() = cols * W;
        out.rowwise() += B;
        if (pattern_) {
            out.array() = (pattern_->layers[layer].activated.array() > T(0)).select(out.array(), T(0));
        } else {
            out = out.cwiseMax(T(0));
        }

        Mat<T> drop;
        const bool stochastic = mode_ != Mode::eval && cfg_.dropout_rate > 0.0;
        if (stochastic) drop = dropout_mask<T>(n, cout, cfg_.dropout_rate, rng_);

        if (record_) {
            auto& lc = trace.layers[layer];
            lc.dims = dims;
            lc.input = in;
            lc.activated = out;
            lc.drop = drop;
        }
        if (stochastic) out.array() *= drop.array();
        return out;
    }

    static FeatureMapT<T> to_feature_map(const Mat<T>& m, const Dims& dims) {
        FeatureMapT<T> f(static_cast<int>(m.cols()), dims);
        std::copy(m.data(), m.data() + m.size(), f.data.begin());
        return f;
    }

    const NetParamsT<T>& params_;
    const NetConfig& cfg_;
    Mode mode_;
    Rng& rng_;
    bool record_;
    const ForwardTrace<T>* pattern_;
};

template <class T>
class UNetBackward {
public:
    UNetBackward(const NetParamsT<T>& params, const ForwardTrace<T>& trace, NetParamsT<T>& grads)
        : params_(params), trace_(trace), grads_(grads) {}

    void run(const FeatureMapT<T>& d_logits, const FeatureMapT<T>& d_penultimate) {
        const int L = params_.config.levels;
        const int out_layer = conv_layer_count(L) - 1;
        const auto& pen = trace_.layers[out_layer].input;
        const auto n = pen.rows();

        Mat<T> grad = Mat<T>::Zero(n, pen.cols());
        if (d_penultimate.channels != 0) {
            if (d_penultimate.channels != pen.cols() || d_penultimate.dims.voxels() != static_cast<std::size_t>(n)) {
                throw ShapeError("d_penultimate shape does not match the trace");
            }
            grad += ConstMapMat<T>(d_penultimate.data.data(), n, pen.cols());
        }
        if (d_logits.channels != 0) {
            if (d_logits.channels != params_.config.out_classes ||
                d_logits.dims.voxels() != static_cast<std::size_t>(n)) {
                throw ShapeError("d_logits shape does not match the trace");
            }
            ConstMapMat<T> dlog(d_logits.data.data(), n, d_logits.channels);
            const auto& w = params_.tensors[2 * out_layer];
            auto& gw = grads_.tensors[2 * out_layer].data;
            auto& gb = grads_.tensors[2 * out_layer + 1].data;
            MapMat<T>(gw.data(), pen.cols(), d_logits.channels).noalias() += pen.transpose() * dlog;
            add_column_sums(dlog, gb);
            grad.noalias() += dlog * ConstMapMat<T>(w.data.data(), pen.cols(), d_logits.channels).transpose();
        }

        std::vector<Mat<T>> d_skips(L);
        for (int i = 0; i <= L - 2; ++i) {
            grad = conv_block_backward(grad, dec_layer(L, i, 1), true);
            grad = conv_block_backward(grad, dec_layer(L, i, 0), true);
            const Eigen::Index c_skip = params_.config.filters(i);
            const Eigen::Index c_up = grad.cols() - c_skip;
            d_skips[i] = grad.rightCols(c_skip);
            Mat<T> d_up = grad.leftCols(c_up);
            grad = upsample_backward(d_up, trace_.layers[dec_layer(L, i, 0)].dims);
        }
        for (int i = L - 1; i >= 0; --i) {
            if (i < L - 1) {
                grad = max_pool_backward(grad, trace_.layers[enc_layer(i, 1)].dims, trace_.pool_argmax[i]);
                grad += d_skips[i];
            }
            grad = conv_block_backward(grad, enc_layer(i, 1), true);
            grad = conv_block_backward(grad, enc_layer(i, 0), i != 0);
        }
    }

private:
    Mat<T> conv_block_backward(const Mat<T>& dout, int layer, bool need_input_grad) {
        const auto& lc = trace_.layers[layer];
        const auto& w = params_.tensors[2 * layer];
        const int cout = w.shape[0];
        const auto n = static_cast<Eigen::Index>(lc.dims.voxels());
        const Eigen::Index cin = lc.input.cols();
        const Eigen::Index k = cin * kTaps;

        Mat<T> dpre = dout;
        if (lc.drop.size() != 0) dpre.array() *= lc.drop.array();
        dpre.array() = (lc.activated.array() > T(0)).select(dpre.array(), T(0));

        auto& ws = Workspace<T>::local();
        ws.cols.resize(static_cast<std::size_t>(n * k));
        MapMat<T> cols(ws.cols.data(), n, k);
        im2col(lc.input, lc.dims, cols);

        auto& gw = grads_.tensors[2 * layer].data;
        auto& gb = grads_.tensors[2 * layer + 1].data;
        MapMat<T>(gw.data(), k, cout).noalias() += cols.transpose() * dpre;
        add_column_sums(dpre, gb);

        if (!need_input_grad) return {};
        ws.dcols.resize(static_cast<std::size_t>(n * k));
        MapMat<T> dcols(ws.dcols.data(), n, k);
        dcols.noalias() = dpre * ConstMapMat<T>(w.data.data(), k, cout).transpose();
        Mat<T> din = Mat<T>::Zero(n, cin);
        col2im(dcols, lc.dims, din);
        return din;
    }

    const NetParamsT<T>& params_;
    const ForwardTrace<T>& trace_;
    NetParamsT<T>& grads_;
};

}  // namespace

template <class T>
ForwardTrace<T> forward(const NetParamsT<T>& params, const Volume3D& x, Mode mode, Rng& rng, bool record) {
    params.config.validate();
    return UNetPass<T>(params, mode, rng, record).run(x);
}

template <class T>
ForwardTrace<T> forward_pinned(const NetParamsT<T>& params, const Volume3D& x, Mode mode, Rng& rng,
                               const ForwardTrace<T>& pattern) {
    params.config.validate();
    if (pattern.layers.size() != static_cast<std::size_t>(conv_layer_count(params.config.levels)) ||
        pattern.logits.dims != x.dims) {
        throw ShapeError("activation pattern does not match the network and input");
    }
    return UNetPass<T>(params, mode, rng, false, &pattern).run(x);
}

template <class T>
void backward_accumulate(const NetParamsT<T>& params, const ForwardTrace<T>& trace, const FeatureMapT<T>& d_logits,
                         const FeatureMapT<T>& d_penultimate, NetParamsT<T>& grads) {
    if (!trace.recorded) throw InvalidArgument("backward needs a trace recorded for backward");
    require_same_layout(params, grads, "backward");
    UNetBackward<T>(params, trace, grads).run(d_logits, d_penultimate);
}

template <class T>
void adam_step(NetParamsT<T>& params, const NetParamsT<T>& grads, OptimizerStateT<T>& state) {
    require_same_layout(params, grads, "adam_step");
    if (state.m.size() != params.tensors.size()) throw ShapeError("adam_step: optimizer state does not match params");
    for (const auto& g : grads.tensors) {
        for (T x : g.data) {
            if (!std::isfinite(static_cast<double>(x))) {
                throw TrainingDivergence("non-finite gradient in parameter " + g.name);
            }
        }
    }
    const auto& h = state.hyper;
    state.step += 1;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < params.tensors.size(); ++t) {
        auto& theta = params.tensors[t].data;
        const auto& g = grads.tensors[t].data;
        auto& m = state.m[t];
        auto& v = state.v[t];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double gi = g[i];
            const double mi = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
            const double vi = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / bc1;
            const double vhat = vi / bc2;
            theta[i] = static_cast<T>(theta[i] - h.lr * mhat / (std::sqrt(vhat) + h.eps));
        }
    }
}

template <class T>
void ema_update(NetParamsT<T>& teacher, const NetParamsT<T>& student, double decay) {
    require_same_layout(teacher, student, "ema_update");
    if (!(decay >= 0.0 && decay <= 1.0)) throw InvalidArgument("ema decay must be in [0, 1]");
    const T a = static_cast<T>(decay);
    const T b = static_cast<T>(1.0 - decay);
    for (std::size_t t = 0; t < teacher.tensors.size(); ++t) {
        auto& dst = teacher.tensors[t].data;
        const auto& src = student.tensors[t].data;
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a * dst[i] + b * src[i];
    }
}

#define VOXSEED_INSTANTIATE(T)                                                                                 \
    template struct ForwardTrace<T>;                                                                           \
    template struct NetParamsT<T>;                                                                             \
    template struct OptimizerStateT<T>;                                                                        \
    template NetParamsT<T> make_params<T>(const NetConfig&);                                                   \
    template ForwardTrace<T> forward(const NetParamsT<T>&, const Volume3D&, Mode, Rng&, bool);                 \
    template ForwardTrace<T> forward_pinned(const NetParamsT<T>&, const Volume3D&, Mode, Rng&,                 \
                                            const ForwardTrace<T>&);                                           \
    template void backward_accumulate(const NetParamsT<T>&, const ForwardTrace<T>&, const FeatureMapT<T>&,     \
                                      const FeatureMapT<T>&, NetParamsT<T>&);                                  \
    template void adam_step(NetParamsT<T>&, const NetParamsT<T>&, OptimizerStateT<T>&);                        \
    template void ema_update(NetParamsT<T>&, const NetParamsT<T>&, double);

VOXSEED_INSTANTIATE(float)
VOXSEED_INSTANTIATE(double)
#undef VOXSEED_INSTANTIATE

template NetParamsT<double> NetParamsT<float>::cast<double>() const;
template NetParamsT<float> NetParamsT<double>::cast<float>() const;

}  // namespace voxseed
