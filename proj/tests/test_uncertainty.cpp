#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "errors.hpp"
#include "uncertainty.hpp"

using namespace voxseed;

namespace {

const double kLn2 = std::log(2.0);

NetConfig tiny() {
    NetConfig c;
    c.levels = 2;
    c.base_filters = 4;
    c.dropout_rate = 0.3;
    return c;
}

Volume3D random_volume(Dims d, std::uint64_t seed) {
    Volume3D v(d, {1, 1, 1});
    Rng rng(seed);
    std::normal_distribution<float> n;
    for (auto& x : v.data) x = n(rng);
    return v;
}

ProbMap constant_probs(Dims d, float p0) {
    ProbMap p(d);
    for (std::size_t v = 0; v < d.voxels(); ++v) {
        p.p(0, v) = p0;
        p.p(1, v) = 1.0f - p0;
    }
    return p;
}

// A network whose logits ignore the input: zero weights, fixed output bias.
NetParams constant_teacher(float b0, float b1) {
    auto p = make_params<float>(tiny());
    auto& b = p.find("out.bias");
    b.data = {b0, b1};
    return p;
}

}  // namespace

TEST_CASE("entropy of a uniform teacher is ln 2 at every voxel for any pass count") {
    const auto teacher = constant_teacher(0.0f, 0.0f);
    const auto x = random_volume({8, 8, 8}, 1);
    for (int m : {1, 3, 7}) {
        Rng rng(m);
        const auto r = mc_uncertainty(teacher, x, m, 0.1, rng);
        for (float h : r.entropy.data) CHECK(h == doctest::Approx(kLn2).epsilon(1e-6));
        // ties go to background
        for (auto y : r.pseudo.data) CHECK(y == 0);
    }
}

TEST_CASE("a certain teacher has near-zero entropy and labels its winning class") {
    const auto teacher = constant_teacher(-40.0f, 40.0f);
    Rng rng(2);
    const auto r = mc_uncertainty(teacher, random_volume({8, 8, 8}, 2), 4, 0.1, rng);
    for (float h : r.entropy.data) CHECK(h < 1e-5f);
    for (auto y : r.pseudo.data) CHECK(y == 1);
}

TEST_CASE("mean entropy averages per-pass entropies") {
    const Dims d{2, 2, 2};
    std::vector<ProbMap> passes{constant_probs(d, 1.0f), constant_probs(d, 0.5f)};
    const auto h = mean_entropy(passes);
    for (float x : h.data) CHECK(x == doctest::Approx(kLn2 / 2).epsilon(1e-5));
    CHECK(h.data.front() == doctest::Approx(0.3466).epsilon(1e-4));
}

TEST_CASE("mean entropy is symmetric in the two classes and bounded by ln 2") {
    Rng rng(5);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    const Dims d{3, 3, 3};
    std::vector<ProbMap> passes, swapped;
    for (int m = 0; m < 5; ++m) {
        ProbMap p(d), q(d);
        for (std::size_t v = 0; v < d.voxels(); ++v) {
            const float a = u(rng);
            p.p(0, v) = a, p.p(1, v) = 1.0f - a;
            q.p(0, v) = 1.0f - a, q.p(1, v) = a;
        }
        passes.push_back(p);
        swapped.push_back(q);
    }
    const auto h = mean_entropy(passes);
    const auto hs = mean_entropy(swapped);
    for (std::size_t v = 0; v < d.voxels(); ++v) {
        CHECK(h.data[v] == doctest::Approx(hs.data[v]).epsilon(1e-6));
        CHECK(h.data[v] >= 0.0f);
        CHECK(h.data[v] <= kLn2 + 1e-6);
    }
}

TEST_CASE("mc uncertainty on a random teacher stays in range and is reproducible") {
    Rng init(9);
    const auto teacher = he_init(tiny(), init);
    const auto x = random_volume({8, 8, 8}, 4);
    Rng a(11), b(11), c(12);
    const auto ra = mc_uncertainty(teacher, x, 5, 0.05, a);
    const auto rb = mc_uncertainty(teacher, x, 5, 0.05, b);
    const auto rc = mc_uncertainty(teacher, x, 5, 0.05, c);
    CHECK(ra.entropy.data == rb.entropy.data);
    CHECK(ra.pseudo.data == rb.pseudo.data);
    CHECK(ra.entropy.data != rc.entropy.data);
    for (float h : ra.entropy.data) {
        CHECK(h >= 0.0f);
        CHECK(h <= kLn2 + 1e-6);
    }
    CHECK(ra.pseudo == argmax_classes(ra.probs));
}

TEST_CASE("mc uncertainty rejects zero passes") {
    Rng rng(0);
    CHECK_THROWS_AS(mc_uncertainty(constant_teacher(0, 0), random_volume({8, 8, 8}, 0), 0, 0.1, rng), InvalidArgument);
}

TEST_CASE("threshold endpoints and monotonicity") {
    CHECK(std::abs(uncertainty_threshold(500, 500) - kLn2) < 1e-9);
    CHECK(uncertainty_threshold(0, 500) == doctest::Approx((0.75 + 0.25 * std::exp(-5.0)) * kLn2).epsilon(1e-12));
    CHECK(uncertainty_threshold(0, 500) == doctest::Approx(0.5211).epsilon(1e-3));
    CHECK(uncertainty_threshold(900, 500) == uncertainty_threshold(500, 500));
    double prev = 0.0;
    for (std::int64_t t = 0; t <= 500; ++t) {
        const double l = uncertainty_threshold(t, 500);
        CHECK(l >= prev);
        prev = l;
    }
}

TEST_CASE("reliable and unreliable masks partition the grid") {
    Rng rng(3);
    std::uniform_real_distribution<float> u(0.0f, float(kLn2));
    ScalarGrid h({4, 5, 6});
    for (auto& x : h.data) x = u(rng);
    h.data[0] = float(kLn2);
    const double lambda = uncertainty_threshold(10, 100);
    const auto reliable = reliability_mask(h, lambda);
    for (std::size_t v = 0; v < h.data.size(); ++v) {
        CHECK(reliable.data[v] == (h.data[v] < lambda ? 1 : 0));
    }
    // at maturity only exact-ln2 voxels stay unreliable
    const auto mature = reliability_mask(h, uncertainty_threshold(100, 100));
    CHECK(mature.data[0] == 0);
    for (std::size_t v = 1; v < h.data.size(); ++v) CHECK(mature.data[v] == (h.data[v] < kLn2 ? 1 : 0));
}

TEST_CASE("loss_ua examples") {
    const Dims d{1, 1, 3};
    Mask3D pseudo(d, 1);
    ProbMapT<double> p(d);
    for (std::size_t v = 0; v < 3; ++v) p.p(0, v) = p.p(1, v) = 0.5;
    Mask3D one(d, 0);
    one.data[1] = 1;
    CHECK(loss_ua(pseudo, p, one).value == doctest::Approx(kLn2).epsilon(1e-12));
    const auto none = loss_ua(pseudo, p, Mask3D(d, 0));
    CHECK(none.value == 0.0);
    for (double g : none.d_logits.data) CHECK(g == 0.0);
    ProbMapT<double> sure(d);
    for (std::size_t v = 0; v < 3; ++v) sure.p(1, v) = 1.0;
    CHECK(loss_ua(pseudo, sure, Mask3D(d, 1)).value == 0.0);
    CHECK_THROWS_AS(loss_ua(Mask3D({1, 1, 2}, 1), p, Mask3D(d, 1)), ShapeError);
}

TEST_CASE("loss_ua over an all-ones mask is the plain mean BCE") {
    Rng rng(4);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    std::bernoulli_distribution b(0.5);
    const Dims d{3, 3, 3};
    ProbMapT<double> p(d);
    Mask3D y(d);
    double sum = 0.0;
    for (std::size_t v = 0; v < d.voxels(); ++v) {
        const double a = u(rng);
        p.p(0, v) = 1.0 - a, p.p(1, v) = a;
        y.data[v] = b(rng);
        sum += -std::log(y.data[v] ? a : 1.0 - a);
    }
    const auto l = loss_ua(y, p, Mask3D(d, 1));
    CHECK(l.value >= 0.0);
    CHECK(l.value == doctest::Approx(sum / d.voxels()).epsilon(1e-12));
}
