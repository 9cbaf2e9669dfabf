#include "nn_pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>

#include "metrics.hpp"

namespace voxseed {

KernelChoice KernelChoice::parse(const std::string& kernel, const std::string& reducer) {
    KernelChoice c;
    if (kernel == "cosine") {
        c.kernel = Kernel::cosine;
    } else if (kernel == "euclidean") {
        c.kernel = Kernel::euclidean;
    } else {
        throw InvalidArgument("unknown kernel '" + kernel + "' (expected cosine or euclidean)");
    }
    if (reducer == "mean") {
        c.reducer = Reducer::mean;
    } else if (reducer == "max") {
        c.reducer = Reducer::max;
    } else {
        throw InvalidArgument("unknown reducer '" + reducer + "' (expected mean or max)");
    }
    return c;
}

std::string KernelChoice::kernel_name() const { return kernel == Kernel::cosine ? "cosine" : "euclidean"; }
std::string KernelChoice::reducer_name() const { return reducer == Reducer::mean ? "mean" : "max"; }

BandSample surface_band_sample(const Mask3D& y, int k, double band, Rng& rng) {
    if (k < 1) throw InvalidArgument("surface_band_sample: k must be >= 1");
    if (!(band >= 1.0)) throw InvalidArgument("surface_band_sample: band must be >= 1");
    const std::size_t fg = y.count();
    if (fg == 0 || fg == y.data.size()) throw NoSurfaceError("surface_band_sample: mask has no object surface");

    const Spacing unit{1.0f, 1.0f, 1.0f};
    const auto to_background = squared_distance_transform(y.complement(), unit);
    const auto to_object = squared_distance_transform(y, unit);
    const double limit = band * band;
    std::vector<std::size_t> obj, bg;
    for (std::size_t v = 0; v < y.data.size(); ++v) {
        if (y.data[v] && to_background.data[v] <= limit) obj.push_back(v);
        if (!y.data[v] && to_object.data[v] <= limit) bg.push_back(v);
    }

    auto draw = [&](const std::vector<std::size_t>& cand) {
        std::vector<std::size_t> out;
        out.reserve(k);
        if (cand.size() >= static_cast<std::size_t>(k)) {
            std::sample(cand.begin(), cand.end(), std::back_inserter(out), k, rng);
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, cand.size() - 1);
            for (int i = 0; i < k; ++i) out.push_back(cand[pick(rng)]);
        }
        return out;
    };
    BandSample s;
    s.object = draw(obj);
    s.background = draw(bg);
    return s;
}

template <class T>
EmbeddingSetT<T> gather_embeddings(const FeatureMapT<T>& f, std::span<const std::size_t> indices, Polarity polarity) {
    if (indices.empty()) throw InvalidArgument("gather_embeddings: no indices");
    const std::size_t n = f.dims.voxels();
    EmbeddingSetT<T> e;
    e.channels = f.channels;
    e.polarity = polarity;
    e.indices.assign(indices.begin(), indices.end());
    e.data.resize(indices.size() * static_cast<std::size_t>(f.channels));
    for (std::size_t j = 0; j < indices.size(); ++j) {
        if (indices[j] >= n) {
            throw IndexError("gather_embeddings: voxel index " + std::to_string(indices[j]) + " out of bounds");
        }
        for (int c = 0; c < f.channels; ++c) e.data[j * f.channels + c] = f.at(c, indices[j]);
    }
    return e;
}

namespace {

// Per-column kernel scores, laid out [j * N + v], plus cached norms.
template <class T>
struct ScoreTable {
    std::size_t n = 0;
    int k = 0;
    std::vector<T> score;
    std::vector<T> aux;         // cosine: |f_v| per voxel; euclidean: distance per (j, v)
    std::vector<T> col_norm;    // cosine: |e_j|
};

template <class T>
ScoreTable<T> score_table(const EmbeddingSetT<T>& emb, const FeatureMapT<T>& f_u, Kernel kernel) {
    if (emb.channels != f_u.channels) {
        throw ShapeError("dense_similarity: embedding channels " + std::to_string(emb.channels) +
                         " vs feature channels " + std::to_string(f_u.channels));
    }
    ScoreTable<T> t;
    t.n = f_u.dims.voxels();
    t.k = emb.k();
    t.score.assign(static_cast<std::size_t>(t.k) * t.n, T(0));
    const int C = f_u.channels;

    if (kernel == Kernel::cosine) {
        t.aux.assign(t.n, T(0));
        for (int c = 0; c < C; ++c) {
            const T* f = f_u.channel(c).data();
            for (std::size_t v = 0; v < t.n; ++v) t.aux[v] += f[v] * f[v];
        }
        for (auto& x : t.aux) x = std::sqrt(x);
        t.col_norm.resize(t.k);
        for (int j = 0; j < t.k; ++j) {
            T s = 0;
            for (T x : emb.column(j)) s += x * x;
            t.col_norm[j] = std::sqrt(s);
        }
        for (int j = 0; j < t.k; ++j) {
            T* out = t.score.data() + static_cast<std::size_t>(j) * t.n;
            const auto e = emb.column(j);
            for (int c = 0; c < C; ++c) {
                const T* f = f_u.channel(c).data();
                const T ec = e[c];
                for (std::size_t v = 0; v < t.n; ++v) out[v] += ec * f[v];
            }
            const T ne = t.col_norm[j];
            for (std::size_t v = 0; v < t.n; ++v) {
                const T nf = t.aux[v];
                out[v] = (ne < T(kZeroNorm) || nf < T(kZeroNorm)) ? T(0) : out[v] / (ne * nf);
            }
        }
    } else {
        t.aux.assign(static_cast<std::size_t>(t.k) * t.n, T(0));
        for (int j = 0; j < t.k; ++j) {
            T* dist = t.aux.data() + static_cast<std::size_t>(j) * t.n;
            const auto e = emb.column(j);
            for (int c = 0; c < C; ++c) {
                const T* f = f_u.channel(c).data();
                const T ec = e[c];
                for (std::size_t v = 0; v < t.n; ++v) {
                    const T diff = f[v] - ec;
                    dist[v] += diff * diff;
                }
            }
            T* out = t.score.data() + static_cast<std::size_t>(j) * t.n;
            for (std::size_t v = 0; v < t.n; ++v) {
                dist[v] = std::sqrt(dist[v]);
                out[v] = T(1) / (T(1) + dist[v]);
            }
        }
    }
    return t;
}

// Index of the first maximal column per voxel.
template <class T>
std::vector<int> argmax_columns(const ScoreTable<T>& t) {
    std::vector<int> arg(t.n, 0);
    for (int j = 1; j < t.k; ++j) {
        const T* s = t.score.data() + static_cast<std::size_t>(j) * t.n;
        for (std::size_t v = 0; v < t.n; ++v) {
            if (s[v] > t.score[static_cast<std::size_t>(arg[v]) * t.n + v]) arg[v] = j;
        }
    }
    return arg;
}

}  // namespace

template <class T>
ScalarGridT<T> dense_similarity(const EmbeddingSetT<T>& emb, const FeatureMapT<T>& f_u, KernelChoice choice) {
    const auto t = score_table(emb, f_u, choice.kernel);
    ScalarGridT<T> out(f_u.dims);
    if (choice.reducer == Reducer::mean) {
        std::vector<double> acc(t.n, 0.0);
        for (int j = 0; j < t.k; ++j) {
            const T* s = t.score.data() + static_cast<std::size_t>(j) * t.n;
            for (std::size_t v = 0; v < t.n; ++v) acc[v] += s[v];
        }
        for (std::size_t v = 0; v < t.n; ++v) out.data[v] = static_cast<T>(acc[v] / t.k);
    } else {
        const auto arg = argmax_columns(t);
        for (std::size_t v = 0; v < t.n; ++v) out.data[v] = t.score[static_cast<std::size_t>(arg[v]) * t.n + v];
    }
    return out;
}

template <class T>
void dense_similarity_backward(const EmbeddingSetT<T>& emb, const FeatureMapT<T>& f_u, KernelChoice choice,
                               const ScalarGridT<T>& d_k, FeatureMapT<T>& d_f_u) {
    require_same_dims(d_k.dims, f_u.dims, "dense_similarity_backward");
    if (d_f_u.channels != f_u.channels || !(d_f_u.dims == f_u.dims)) {
        throw ShapeError("dense_similarity_backward: gradient buffer shape mismatch");
    }
    const auto t = score_table(emb, f_u, choice.kernel);
    const int C = f_u.channels;
    std::vector<int> arg;
    if (choice.reducer == Reducer::max) arg = argmax_columns(t);
    const T mean_weight = T(1) / static_cast<T>(t.k);

    std::vector<T> coef(t.n), coef_self(t.n);
    for (int j = 0; j < t.k; ++j) {
        const T* s = t.score.data() + static_cast<std::size_t>(j) * t.n;
        // dscore/df_v = coef * e_j + coef_self * f_v
        for (std::size_t v = 0; v < t.n; ++v) {
            T w = choice.reducer == Reducer::mean ? mean_weight : (arg[v] == j ? T(1) : T(0));
            w *= d_k.data[v];
            if (choice.kernel == Kernel::cosine) {
                const T ne = t.col_norm[j], nf = t.aux[v];
                if (w == T(0) || ne < T(kZeroNorm) || nf < T(kZeroNorm)) {
                    coef[v] = coef_self[v] = T(0);
                } else {
                    coef[v] = w / (ne * nf);
                    coef_self[v] = -w * s[v] / (nf * nf);
                }
            } else {
                const T d = t.aux[static_cast<std::size_t>(j) * t.n + v];
                if (w == T(0) || d == T(0)) {
                    coef[v] = coef_self[v] = T(0);
                } else {
                    // d/df 1/(1+|f-e|) = -(f-e) / (|f-e| (1+|f-e|)^2)
                    const T g = -w / (d * (T(1) + d) * (T(1) + d));
                    coef[v] = -g;
                    coef_self[v] = g;
                }
            }
        }
        const auto e = emb.column(j);
        for (int c = 0; c < C; ++c) {
            const T* f = f_u.channel(c).data();
            T* df = d_f_u.channel(c).data();
            const T ec = e[c];
            for (std::size_t v = 0; v < t.n; ++v) df[v] += coef[v] * ec + coef_self[v] * f[v];
        }
    }
}

template <class T>
EnsembleResultT<T> ensemble_similarity(const Mask3D& y, const FeatureMapT<T>& f_labeled,
                                       const FeatureMapT<T>& f_unlabeled, int k, int runs, double band,
                                       KernelChoice choice, Rng& rng) {
    if (runs < 1) throw InvalidArgument("ensemble_similarity: runs must be >= 1");
    require_same_dims(y.dims, f_labeled.dims, "ensemble_similarity labeled features");
    const std::size_t n = f_unlabeled.dims.voxels();
    std::vector<double> acc_plus(n, 0.0), acc_minus(n, 0.0);
    EnsembleResultT<T> out;
    for (int r = 0; r < runs; ++r) {
        const auto sample = surface_band_sample(y, k, band, rng);
        out.plus_sets.push_back(gather_embeddings(f_labeled, std::span<const std::size_t>(sample.object),
                                                  Polarity::object));
        out.minus_sets.push_back(gather_embeddings(f_labeled, std::span<const std::size_t>(sample.background),
                                                   Polarity::background));
        const auto kp = dense_similarity(out.plus_sets.back(), f_unlabeled, choice);
        const auto km = dense_similarity(out.minus_sets.back(), f_unlabeled, choice);
        for (std::size_t v = 0; v < n; ++v) {
            acc_plus[v] += kp.data[v];
            acc_minus[v] += km.data[v];
        }
    }
    out.k_plus = ScalarGridT<T>(f_unlabeled.dims);
    out.k_minus = ScalarGridT<T>(f_unlabeled.dims);
    for (std::size_t v = 0; v < n; ++v) {
        out.k_plus.data[v] = static_cast<T>(acc_plus[v] / runs);
        out.k_minus.data[v] = static_cast<T>(acc_minus[v] / runs);
    }
    return out;
}

template <class T>
FeatureMapT<T> ensemble_similarity_backward(const EnsembleResultT<T>& ens, const FeatureMapT<T>& f_unlabeled,
                                            KernelChoice choice, const ScalarGridT<T>& d_plus,
                                            const ScalarGridT<T>& d_minus) {
    FeatureMapT<T> grad(f_unlabeled.channels, f_unlabeled.dims);
    const T scale = T(1) / static_cast<T>(ens.plus_sets.size());
    ScalarGridT<T> dp = d_plus, dm = d_minus;
    for (auto& x : dp.data) x *= scale;
    for (auto& x : dm.data) x *= scale;
    for (std::size_t r = 0; r < ens.plus_sets.size(); ++r) {
        dense_similarity_backward(ens.plus_sets[r], f_unlabeled, choice, dp, grad);
        dense_similarity_backward(ens.minus_sets[r], f_unlabeled, choice, dm, grad);
    }
    return grad;
}

template <class T>
Mask3D pseudo_label_nn(const ScalarGridT<T>& k_plus, const ScalarGridT<T>& k_minus) {
    require_same_dims(k_plus.dims, k_minus.dims, "pseudo_label_nn");
    Mask3D out(k_plus.dims);
    for (std::size_t v = 0; v < out.data.size(); ++v) out.data[v] = k_plus.data[v] > k_minus.data[v] ? 1 : 0;
    return out;
}

template <class T>
EntropyLossT<T> loss_entropy_min(const ScalarGridT<T>& k_plus, const ScalarGridT<T>& k_minus, const Mask3D* scope) {
    require_same_dims(k_plus.dims, k_minus.dims, "loss_entropy_min");
    if (scope) require_same_dims(scope->dims, k_plus.dims, "loss_entropy_min scope");
    const std::size_t n = k_plus.dims.voxels();
    EntropyLossT<T> out;
    out.d_plus = ScalarGridT<T>(k_plus.dims);
    out.d_minus = ScalarGridT<T>(k_plus.dims);
    out.count = scope ? scope->count() : n;
    if (out.count == 0) return out;
    const double inv = 1.0 / static_cast<double>(out.count);
    double sum = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        if (scope && !scope->data[v]) continue;
        const double delta = static_cast<double>(k_plus.data[v]) - static_cast<double>(k_minus.data[v]);
        const double a = std::abs(delta);
        const double ea = std::exp(-a);
        // H = log(1 + e^-a) + a * sigmoid(-a), symmetric in the sign of delta
        sum += std::log1p(ea) + a * ea / (1.0 + ea);
        const double p = 1.0 / (1.0 + std::exp(-delta));
        const double dh = -p * (1.0 - p) * delta * inv;
        out.d_plus.data[v] = static_cast<T>(dh);
        out.d_minus.data[v] = static_cast<T>(-dh);
    }
    out.value = static_cast<T>(sum * inv);
    return out;
}

#define VOXSEED_INSTANTIATE(T)                                                                                     \
    template EmbeddingSetT<T> gather_embeddings(const FeatureMapT<T>&, std::span<const std::size_t>, Polarity);   \
    template ScalarGridT<T> dense_similarity(const EmbeddingSetT<T>&, const FeatureMapT<T>&, KernelChoice);       \
    template void dense_similarity_backward(const EmbeddingSetT<T>&, const FeatureMapT<T>&, KernelChoice,          \
                                            const ScalarGridT<T>&, FeatureMapT<T>&);                              \
    template EnsembleResultT<T> ensemble_similarity(const Mask3D&, const FeatureMapT<T>&, const FeatureMapT<T>&,   \
                                                    int, int, double, KernelChoice, Rng&);                         \
    template FeatureMapT<T> ensemble_similarity_backward(const EnsembleResultT<T>&, const FeatureMapT<T>&,         \
                                                         KernelChoice, const ScalarGridT<T>&,                      \
                                                         const ScalarGridT<T>&);                                   \
    template Mask3D pseudo_label_nn(const ScalarGridT<T>&, const ScalarGridT<T>&);                                 \
    template EntropyLossT<T> loss_entropy_min(const ScalarGridT<T>&, const ScalarGridT<T>&, const Mask3D*);

VOXSEED_INSTANTIATE(float)
VOXSEED_INSTANTIATE(double)
#undef VOXSEED_INSTANTIATE

}  // namespace voxseed
