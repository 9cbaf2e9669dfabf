#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "doctest.h"
#include "errors.hpp"
#include "losses.hpp"

using namespace voxseed;

namespace {

FeatureMapT<double> random_logits(Dims d, std::uint64_t seed, double scale = 2.0) {
    FeatureMapT<double> z(2, d);
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    for (auto& x : z.data) x = n(rng);
    return z;
}

Mask3D random_mask(Dims d, std::uint64_t seed, double p = 0.5) {
    Mask3D m(d);
    Rng rng(seed);
    std::bernoulli_distribution b(p);
    for (auto& x : m.data) x = b(rng);
    return m;
}

// Worst relative error between d_logits and central differences of loss(softmax(z)).
double fd_worst(const FeatureMapT<double>& z0, const std::function<LossGrad<double>(const ProbMapT<double>&)>& loss) {
    const auto g = loss(softmax_over_classes(z0));
    auto z = z0;
    const double h = 1e-3;
    double worst = 0.0;
    for (std::size_t i = 0; i < z.data.size(); ++i) {
        const double saved = z.data[i];
        z.data[i] = saved + h;
        const double up = loss(softmax_over_classes(z)).value;
        z.data[i] = saved - h;
        const double down = loss(softmax_over_classes(z)).value;
        z.data[i] = saved;
        const double numeric = (up - down) / (2 * h);
        const double analytic = g.d_logits.data[i];
        worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-8}));
    }
    return worst;
}

ProbMapT<double> constant_probs(Dims d, double p1) {
    ProbMapT<double> p(d);
    for (std::size_t v = 0; v < d.voxels(); ++v) {
        p.p(0, v) = 1.0 - p1;
        p.p(1, v) = p1;
    }
    return p;
}

}  // namespace

TEST_CASE("ramp-up endpoints") {
    const RampSchedule s{0.25, 1000};
    CHECK(ramp_up(1000, s) == 0.25);
    CHECK(std::abs(ramp_up(0, s) - 0.25 * std::exp(-5.0)) < 1e-12);
    CHECK(ramp_up(0, s) == doctest::Approx(0.0016845).epsilon(1e-4));
    // clamped beyond maturity
    CHECK(ramp_up(5000, s) == 0.25);
    for (double t : {0.0, 10.0, 500.0, 1000.0}) CHECK(ramp_up(t, RampSchedule{0.0, 1000}) == 0.0);
}

TEST_CASE("ramp-up matches the closed form at every iteration and is monotone") {
    const std::int64_t tn = 257;
    const RampSchedule s{0.125, tn};
    double prev = -1.0;
    for (std::int64_t t = 0; t <= tn; ++t) {
        const double r = 1.0 - double(t) / double(tn);
        const double expected = 0.125 * std::exp(-5.0 * r * r);
        const double got = ramp_up(double(t), s);
        CHECK(got == doctest::Approx(expected).epsilon(1e-14));
        CHECK(got >= prev);
        prev = got;
    }
}

TEST_CASE("dice loss hand-computed values") {
    const Dims d{2, 3, 4};
    const Mask3D ones(d, 1), zeros(d, 0);
    CHECK(dice_loss(constant_probs(d, 0.5), ones).value == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    CHECK(std::abs(dice_loss(constant_probs(d, 0.0), zeros).value) < 1e-12);
    const auto y = random_mask(d, 3);
    ProbMapT<double> hard(d);
    for (std::size_t v = 0; v < d.voxels(); ++v) {
        hard.p(1, v) = y.data[v];
        hard.p(0, v) = 1.0 - y.data[v];
    }
    CHECK(dice_loss(hard, y).value < 1e-5);
    CHECK_THROWS_AS(dice_loss(constant_probs(d, 0.5), Mask3D({2, 3, 3}, 1)), ShapeError);
}

TEST_CASE("supervised loss of a uniform prediction on an all-object mask") {
    const Dims d{4, 4, 4};
    const auto l = supervised_loss(constant_probs(d, 0.5), Mask3D(d, 1));
    CHECK(l.value == doctest::Approx(std::log(2.0) + 1.0 / 3.0).epsilon(1e-6));
    CHECK(l.value == doctest::Approx(1.0265).epsilon(1e-4));
}

TEST_CASE("supervised loss of a perfect hard prediction is near zero") {
    const Dims d{4, 4, 4};
    const auto y = random_mask(d, 8);
    ProbMapT<double> p(d);
    for (std::size_t v = 0; v < d.voxels(); ++v) {
        p.p(1, v) = y.data[v];
        p.p(0, v) = 1.0 - y.data[v];
    }
    const auto l = supervised_loss(p, y);
    CHECK(l.value >= 0.0);
    CHECK(l.value < 1e-5);
}

TEST_CASE("supervised loss is invariant to voxel ordering") {
    const Dims d{3, 4, 5};
    const auto z = random_logits(d, 2);
    const auto y = random_mask(d, 4);
    const auto p = softmax_over_classes(z);
    std::vector<std::size_t> perm(d.voxels());
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(6);
    std::shuffle(perm.begin(), perm.end(), rng);
    ProbMapT<double> q(d);
    Mask3D yq(d);
    for (std::size_t v = 0; v < d.voxels(); ++v) {
        q.p(0, v) = p.p(0, perm[v]);
        q.p(1, v) = p.p(1, perm[v]);
        yq.data[v] = y.data[perm[v]];
    }
    CHECK(supervised_loss(q, yq).value == doctest::Approx(supervised_loss(p, y).value).epsilon(1e-12));
}

TEST_CASE("loss ranges on random inputs") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Dims d{3, 3, 3};
        const auto p = softmax_over_classes(random_logits(d, s, 4.0));
        const auto y = random_mask(d, s + 100, 0.3);
        const auto dice = dice_loss(p, y).value;
        CHECK(dice >= 0.0);
        CHECK(dice <= 1.0);
        CHECK(masked_bce(y, p, Mask3D(d, 1)).value >= 0.0);
    }
}

TEST_CASE("masked bce: empty mask gives zero loss and zero gradient") {
    const Dims d{2, 2, 2};
    const auto l = masked_bce(Mask3D(d, 1), softmax_over_classes(random_logits(d, 1)), Mask3D(d, 0));
    CHECK(l.value == 0.0);
    CHECK(l.count == 0);
    for (double g : l.d_logits.data) CHECK(g == 0.0);
}

TEST_CASE("masked bce counts only masked voxels and matches the mean of -ln p") {
    const Dims d{2, 3, 4};
    const auto p = softmax_over_classes(random_logits(d, 3));
    const auto y = random_mask(d, 4);
    const auto m = random_mask(d, 5);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t v = 0; v < d.voxels(); ++v) {
        if (!m.data[v]) continue;
        sum += -std::log(std::max(p.p(y.data[v], v), kProbFloor));
        ++n;
    }
    const auto l = masked_bce(y, p, m);
    CHECK(l.count == n);
    CHECK(l.value == doctest::Approx(sum / n).epsilon(1e-12));
}

TEST_CASE("loss gradients w.r.t. logits match finite differences") {
    const Dims d{3, 3, 4};
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto z = random_logits(d, s);
        const auto y = random_mask(d, s + 10);
        const auto m = random_mask(d, s + 20);
        CHECK(fd_worst(z, [&](const ProbMapT<double>& p) { return masked_bce(y, p, m); }) < 1e-4);
        CHECK(fd_worst(z, [&](const ProbMapT<double>& p) { return dice_loss(p, y); }) < 1e-4);
        CHECK(fd_worst(z, [&](const ProbMapT<double>& p) { return supervised_loss(p, y); }) < 1e-4);
    }
}

TEST_CASE("total loss assembly") {
    const auto r = total_loss(1.0, 1.0, 1.0, 1.0, 100, 100);
    CHECK(r.w_ua == 0.25);
    CHECK(r.w_ps == 0.125);
    CHECK(r.total == doctest::Approx(1.5).epsilon(1e-12));
    const auto r0 = total_loss(0.7, 2.0, 3.0, 4.0, 0, 100);
    CHECK(r0.w_ua == doctest::Approx(0.0016845).epsilon(1e-4));
    CHECK(r0.w_ps == doctest::Approx(0.00084224).epsilon(1e-4));
    CHECK(total_loss(0.7, 0.0, 0.0, 0.0, 37, 100).total == 0.7);
}

TEST_CASE("total loss: weight ratio is exactly two and the total is linear in each term") {
    for (std::int64_t t = 0; t <= 64; ++t) {
        const auto r = total_loss(0.3, 0.5, 0.2, 0.1, t, 64);
        CHECK(r.w_ua == 2.0 * r.w_ps);
        CHECK(std::abs(r.total - (r.supervised + r.w_ua * r.uncertainty + r.w_ps * (r.matching + r.entropy))) <= 1e-6);
        const double e = 1e-3;
        const auto bumped = total_loss(0.3, 0.5 + e, 0.2, 0.1, t, 64);
        CHECK((bumped.total - r.total) / e == doctest::Approx(r.w_ua).epsilon(1e-6));
        const auto bumped_en = total_loss(0.3, 0.5, 0.2, 0.1 + e, t, 64);
        CHECK((bumped_en.total - r.total) / e == doctest::Approx(r.w_ps).epsilon(1e-6));
    }
}

TEST_CASE("total loss rejects non-finite terms") {
    CHECK_THROWS_AS(total_loss(NAN, 0, 0, 0, 0, 1), TrainingDivergence);
    CHECK_THROWS_AS(total_loss(0, INFINITY, 0, 0, 0, 1), TrainingDivergence);
    CHECK_THROWS_AS(total_loss(0, 0, 0, -INFINITY, 0, 1), TrainingDivergence);
}

TEST_CASE("loss report serialises to one JSON line") {
    const auto line = total_loss(1, 1, 1, 1, 3, 10).to_json_line();
    CHECK(line.find('\n') == std::string::npos);
    CHECK(line.front() == '{');
    CHECK(line.find("\"L_total\"") != std::string::npos);
}
