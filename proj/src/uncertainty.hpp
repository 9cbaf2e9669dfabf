#pragma once

// Teacher pseudo-labels filtered by Monte Carlo dropout entropy.

#include <cstdint>
#include <span>

#include "losses.hpp"
#include "net3d.hpp"
#include "volume.hpp"

namespace voxseed {

struct McResult {
    ScalarGrid entropy;  // mean predictive entropy over passes, nats
    ProbMap probs;       // deterministic teacher pass
    Mask3D pseudo;       // argmax of `probs`
};

// -sum_c p_c ln p_c per voxel, averaged over passes. Probabilities are
// clamped to [1e-7, 1] before the log.
ScalarGrid mean_entropy(std::span<const ProbMap> passes);

// M dropout-active passes on x plus fresh Gaussian noise each, followed by one
// dropout-free pass on x plus weak noise that supplies the pseudo-labels.
McResult mc_uncertainty(const NetParams& teacher, const Volume3D& x, int passes, double noise_sigma, Rng& rng);

// (0.75 + ramp_up(T, 0.25)) * ln 2, with T clamped to T_N.
double uncertainty_threshold(std::int64_t iteration, std::int64_t total_iterations);

// 1 where entropy < threshold.
Mask3D reliability_mask(const ScalarGrid& entropy, double threshold);

// Masked BCE between teacher pseudo-labels and student probabilities over the
// reliable voxels.
template <class T>
LossGrad<T> loss_ua(const Mask3D& pseudo, const ProbMapT<T>& student_probs, const Mask3D& reliable) {
    return masked_bce(pseudo, student_probs, reliable);
}

}  // namespace voxseed
