#pragma once

// Ramp-up schedule, supervised loss and the weighted total of all loss terms.

#include <cstdint>
#include <string>

#include "volume.hpp"

namespace voxseed {

struct RampSchedule {
    double scale = 1.0;            // value at maturity
    std::int64_t total_iterations = 1;
};

// s * exp(-5 (1 - T/T_N)^2) with T clamped to [0, T_N].
double ramp_up(double iteration, const RampSchedule& sched);

inline constexpr double kUncertaintyWeight = 0.25;
inline constexpr double kPseudoLabelWeight = 0.125;
inline constexpr double kDiceSmoothing = 1e-5;
inline constexpr double kProbFloor = 1e-7;

// A scalar loss with its gradient w.r.t. the two-class logits that produced
// the probabilities.
template <class T>
struct LossGrad {
    T value = T(0);
    FeatureMapT<T> d_logits;
    std::size_t count = 0;  // voxels contributing
};

// Mean over `mask` of -ln p(label). Zero loss and gradient for an empty mask.
template <class T>
LossGrad<T> masked_bce(const Mask3D& labels, const ProbMapT<T>& probs, const Mask3D& mask);

// 1 - (2 sum(p1 y) + eps) / (sum p1 + sum y + eps)
template <class T>
LossGrad<T> dice_loss(const ProbMapT<T>& probs, const Mask3D& y);

// Mean voxelwise cross-entropy plus soft Dice, unit weights.
template <class T>
LossGrad<T> supervised_loss(const ProbMapT<T>& probs, const Mask3D& y);

struct LossReport {
    std::int64_t iteration = 0;
    double supervised = 0.0;    // L_S
    double uncertainty = 0.0;   // L_UA
    double matching = 0.0;      // L_NN
    double entropy = 0.0;       // L_EN
    double w_ua = 0.0;
    double w_ps = 0.0;
    double total = 0.0;
    double reliable_fraction = 0.0;
    std::size_t supervised_voxels = 0;
    std::size_t reliable_voxels = 0;
    std::size_t unreliable_voxels = 0;

    std::string to_json_line() const;
};

// L = L_S + w_UA L_UA + w_PS (L_NN + L_EN) with both weights ramped.
// Throws TrainingDivergence on non-finite input.
LossReport total_loss(double l_s, double l_ua, double l_nn, double l_en, std::int64_t iteration,
                      std::int64_t total_iterations);

}  // namespace voxseed
