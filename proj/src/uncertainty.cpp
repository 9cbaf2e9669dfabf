#include "uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace voxseed {

ScalarGrid mean_entropy(std::span<const ProbMap> passes) {
    if (passes.empty()) throw InvalidArgument("mean_entropy needs at least one pass");
    const Dims dims = passes.front().dims;
    const std::size_t n = dims.voxels();
    std::vector<double> acc(n, 0.0);
    for (const auto& p : passes) {
        require_same_dims(p.dims, dims, "mean_entropy");
        for (std::size_t v = 0; v < n; ++v) {
            double h = 0.0;
            for (int c = 0; c < 2; ++c) {
                const double q = std::clamp(static_cast<double>(p.p(c, v)), kProbFloor, 1.0);
                h -= q * std::log(q);
            }
            acc[v] += h;
        }
    }
    ScalarGrid out(dims);
    const double m = static_cast<double>(passes.size());
    for (std::size_t v = 0; v < n; ++v) out.data[v] = static_cast<float>(acc[v] / m);
    return out;
}

McResult mc_uncertainty(const NetParams& teacher, const Volume3D& x, int passes, double noise_sigma, Rng& rng) {
    if (passes < 1) throw InvalidArgument("mc_uncertainty: number of passes must be >= 1");
    std::vector<ProbMap> probs;
    probs.reserve(passes);
    for (int m = 0; m < passes; ++m) {
        Rng pass_rng(split_seed(rng));
        const Volume3D noisy = add_gaussian_noise(x, noise_sigma, pass_rng);
        auto trace = forward(teacher, noisy, Mode::mc_dropout, pass_rng, false);
        probs.push_back(softmax_over_classes(trace.logits));
    }
    McResult out;
    out.entropy = mean_entropy(probs);

    Rng eval_rng(split_seed(rng));
    const Volume3D noisy = add_gaussian_noise(x, noise_sigma, eval_rng);
    auto trace = forward(teacher, noisy, Mode::eval, eval_rng, false);
    out.probs = softmax_over_classes(trace.logits);
    out.pseudo = argmax_classes(out.probs);
    return out;
}

double uncertainty_threshold(std::int64_t iteration, std::int64_t total_iterations) {
    if (total_iterations < 1) throw InvalidArgument("uncertainty_threshold: T_N must be >= 1");
    if (iteration < 0) throw InvalidArgument("uncertainty_threshold: T must be >= 0");
    const double ramp = ramp_up(static_cast<double>(std::min(iteration, total_iterations)),
                                {kUncertaintyWeight, total_iterations});
    return (0.75 + ramp) * std::numbers::ln2;
}

Mask3D reliability_mask(const ScalarGrid& entropy, double threshold) {
    Mask3D out(entropy.dims);
    for (std::size_t v = 0; v < entropy.data.size(); ++v) {
        out.data[v] = static_cast<double>(entropy.data[v]) < threshold ? 1 : 0;
    }
    return out;
}

}  // namespace voxseed
