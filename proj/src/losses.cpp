#include "losses.hpp"

#include <algorithm>
#include <cmath>
#include "json.hpp"

namespace voxseed {

double ramp_up(double iteration, const RampSchedule& sched) {
    if (sched.total_iterations < 1) throw InvalidArgument("ramp_up: total iterations must be >= 1");
    const double tn = static_cast<double>(sched.total_iterations);
    const double t = std::clamp(iteration, 0.0, tn);
    const double phase = 1.0 - t / tn;
    return sched.scale * std::exp(-5.0 * phase * phase);
}

template <class T>
LossGrad<T> masked_bce(const Mask3D& labels, const ProbMapT<T>& probs, const Mask3D& mask) {
    require_same_dims(labels.dims, probs.dims, "masked_bce labels");
    require_same_dims(mask.dims, probs.dims, "masked_bce mask");
    const std::size_t n = probs.dims.voxels();
    LossGrad<T> out;
    out.d_logits = FeatureMapT<T>(2, probs.dims);
    out.count = mask.count();
    if (out.count == 0) return out;
    const T inv = T(1) / static_cast<T>(out.count);
    double sum = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        if (!mask.data[v]) continue;
        const int y = labels.data[v];
        const T p = std::max(probs.p(y, v), static_cast<T>(kProbFloor));
        sum -= std::log(static_cast<double>(p));
        // d(-ln p_y)/dz_c = p_c - [c == y]
        out.d_logits.at(0, v) = (probs.p(0, v) - (y == 0 ? T(1) : T(0))) * inv;
        out.d_logits.at(1, v) = (probs.p(1, v) - (y == 1 ? T(1) : T(0))) * inv;
    }
    out.value = static_cast<T>(sum / static_cast<double>(out.count));
    return out;
}

template <class T>
LossGrad<T> dice_loss(const ProbMapT<T>& probs, const Mask3D& y) {
    require_same_dims(probs.dims, y.dims, "dice_loss");
    const std::size_t n = probs.dims.voxels();
    double inter = 0.0, sum_p = 0.0, sum_y = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        const double p1 = probs.p(1, v);
        inter += p1 * y.data[v];
        sum_p += p1;
        sum_y += y.data[v];
    }
    const double eps = kDiceSmoothing;
    const double num = 2.0 * inter + eps;
    const double den = sum_p + sum_y + eps;
    LossGrad<T> out;
    out.value = static_cast<T>(1.0 - num / den);
    out.count = n;
    out.d_logits = FeatureMapT<T>(2, probs.dims);
    for (std::size_t v = 0; v < n; ++v) {
        const double dd_dp1 = -(2.0 * y.data[v] * den - num) / (den * den);
        // p1 = softmax: dp1/dz1 = p0 p1, dp1/dz0 = -p0 p1
        const double jac = static_cast<double>(probs.p(0, v)) * probs.p(1, v);
        out.d_logits.at(1, v) = static_cast<T>(dd_dp1 * jac);
        out.d_logits.at(0, v) = static_cast<T>(-dd_dp1 * jac);
    }
    return out;
}

template <class T>
LossGrad<T> supervised_loss(const ProbMapT<T>& probs, const Mask3D& y) {
    auto ce = masked_bce(y, probs, Mask3D(probs.dims, 1));
    auto dice = dice_loss(probs, y);
    for (std::size_t i = 0; i < ce.d_logits.data.size(); ++i) ce.d_logits.data[i] += dice.d_logits.data[i];
    ce.value += dice.value;
    return ce;
}

LossReport total_loss(double l_s, double l_ua, double l_nn, double l_en, std::int64_t iteration,
                      std::int64_t total_iterations) {
    LossReport r;
    r.iteration = iteration;
    r.supervised = l_s;
    r.uncertainty = l_ua;
    r.matching = l_nn;
    r.entropy = l_en;
    const double t = static_cast<double>(iteration);
    r.w_ua = ramp_up(t, {kUncertaintyWeight, total_iterations});
    r.w_ps = ramp_up(t, {kPseudoLabelWeight, total_iterations});
    r.total = l_s + r.w_ua * l_ua + r.w_ps * (l_nn + l_en);
    for (double x : {l_s, l_ua, l_nn, l_en}) {
        if (!std::isfinite(x)) throw TrainingDivergence("non-finite loss term: " + r.to_json_line());
    }
    return r;
}

std::string LossReport::to_json_line() const {
    // NaN is not valid JSON; report it as null.
    auto num = [](double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); };
    nlohmann::json j;
    j["iter"] = iteration;
    j["L_S"] = num(supervised);
    j["L_UA"] = num(uncertainty);
    j["L_NN"] = num(matching);
    j["L_EN"] = num(entropy);
    j["w_UA"] = num(w_ua);
    j["w_PS"] = num(w_ps);
    j["L_total"] = num(total);
    j["reliable_fraction"] = num(reliable_fraction);
    j["n_supervised"] = supervised_voxels;
    j["n_reliable"] = reliable_voxels;
    j["n_unreliable"] = unreliable_voxels;
    return j.dump();
}

template LossGrad<float> masked_bce(const Mask3D&, const ProbMapT<float>&, const Mask3D&);
template LossGrad<double> masked_bce(const Mask3D&, const ProbMapT<double>&, const Mask3D&);
template LossGrad<float> dice_loss(const ProbMapT<float>&, const Mask3D&);
template LossGrad<double> dice_loss(const ProbMapT<double>&, const Mask3D&);
template LossGrad<float> supervised_loss(const ProbMapT<float>&, const Mask3D&);
template LossGrad<double> supervised_loss(const ProbMapT<double>&, const Mask3D&);

}  // namespace voxseed
