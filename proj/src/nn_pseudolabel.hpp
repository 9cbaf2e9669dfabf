#pragma once

// Label propagation by embedding correspondence: labeled voxels sampled near
// the object surface are embedded with the teacher, every unlabeled voxel's
// student embedding is scored against them, and the two similarity maps give
// a nearest-neighbour pseudo-label plus an entropy-minimisation loss.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "losses.hpp"
#include "rng.hpp"
#include "volume.hpp"

namespace voxseed {

enum class Kernel { cosine, euclidean };
enum class Reducer { mean, max };

struct KernelChoice {
    Kernel kernel = Kernel::cosine;
    Reducer reducer = Reducer::mean;

    static KernelChoice parse(const std::string& kernel, const std::string& reducer);
    std::string kernel_name() const;
    std::string reducer_name() const;
    bool operator==(const KernelChoice&) const = default;
};

// Norms below this make the cosine kernel return 0.
inline constexpr double kZeroNorm = 1e-12;

enum class Polarity { object, background };

struct BandSample {
    std::vector<std::size_t> object;
    std::vector<std::size_t> background;
};

// k object voxels within `band` voxels of the nearest background voxel and k
// background voxels within `band` of the nearest object voxel. Without
// replacement when the band is large enough, with replacement otherwise.
BandSample surface_band_sample(const Mask3D& y, int k, double band, Rng& rng);

// Columns are embeddings: element (c, j) at data[j * channels + c].
template <class T>
struct EmbeddingSetT {
    int channels = 0;
    Polarity polarity = Polarity::object;
    std::vector<std::size_t> indices;
    std::vector<T> data;

    int k() const { return static_cast<int>(indices.size()); }
    std::span<const T> column(int j) const { return {data.data() + static_cast<std::size_t>(j) * channels,
                                                     static_cast<std::size_t>(channels)}; }
};
using EmbeddingSet = EmbeddingSetT<float>;

template <class T>
EmbeddingSetT<T> gather_embeddings(const FeatureMapT<T>& f, std::span<const std::size_t> indices, Polarity polarity);

// Per voxel: kernel(embedding_j, f_U[:, v]) for every column j, reduced by
// mean or max.
template <class T>
ScalarGridT<T> dense_similarity(const EmbeddingSetT<T>& emb, const FeatureMapT<T>& f_u, KernelChoice choice);

// Adds dL/df_U given dL/dK into `d_f_u`. Embeddings are constants.
template <class T>
void dense_similarity_backward(const EmbeddingSetT<T>& emb, const FeatureMapT<T>& f_u, KernelChoice choice,
                               const ScalarGridT<T>& d_k, FeatureMapT<T>& d_f_u);

template <class T>
struct EnsembleResultT {
    ScalarGridT<T> k_plus;
    ScalarGridT<T> k_minus;
    std::vector<EmbeddingSetT<T>> plus_sets;
    std::vector<EmbeddingSetT<T>> minus_sets;
};

// Mean of `runs` independent sample-embed-score rounds per polarity.
template <class T>
EnsembleResultT<T> ensemble_similarity(const Mask3D& y, const FeatureMapT<T>& f_labeled,
                                       const FeatureMapT<T>& f_unlabeled, int k, int runs, double band,
                                       KernelChoice choice, Rng& rng);

template <class T>
FeatureMapT<T> ensemble_similarity_backward(const EnsembleResultT<T>& ens, const FeatureMapT<T>& f_unlabeled,
                                            KernelChoice choice, const ScalarGridT<T>& d_plus,
                                            const ScalarGridT<T>& d_minus);

// 1 where k_plus > k_minus strictly; ties go to background.
template <class T>
Mask3D pseudo_label_nn(const ScalarGridT<T>& k_plus, const ScalarGridT<T>& k_minus);

// Masked BCE against the nearest-neighbour labels over the unreliable voxels.
template <class T>
LossGrad<T> loss_nn(const Mask3D& y_nn, const ProbMapT<T>& student_probs, const Mask3D& unreliable) {
    return masked_bce(y_nn, student_probs, unreliable);
}

template <class T>
struct EntropyLossT {
    T value = T(0);
    ScalarGridT<T> d_plus;
    ScalarGridT<T> d_minus;
    std::size_t count = 0;
};

// Binary entropy of softmax(k_plus, k_minus), averaged over `scope` (all
// voxels when null).
template <class T>
EntropyLossT<T> loss_entropy_min(const ScalarGridT<T>& k_plus, const ScalarGridT<T>& k_minus,
                                 const Mask3D* scope = nullptr);

}  // namespace voxseed
