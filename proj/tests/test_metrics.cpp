#include <cmath>
#include <random>

#include "doctest.h"
#include "errors.hpp"
#include "metrics.hpp"
#include "oracles.hpp"

using namespace voxseed;

namespace {

Mask3D cube(Dims d, int i0, int j0, int k0, int side) {
    Mask3D m(d);
    for (int i = i0; i < i0 + side; ++i)
        for (int j = j0; j < j0 + side; ++j)
            for (int k = k0; k < k0 + side; ++k) m.at(i, j, k) = 1;
    return m;
}

Mask3D random_mask(Dims d, Rng& rng, double p) {
    for (;;) {
        Mask3D m(d);
        std::bernoulli_distribution b(p);
        for (auto& x : m.data) x = b(rng);
        for (auto x : m.data)
            if (x) return m;
    }
}

// Nearest-rank percentile of all-pairs surface distances, both directions.
double brute_hd95(const Mask3D& a, const Mask3D& b, const Spacing& s) {
    const auto sa = extract_surface(a), sb = extract_surface(b);
    auto directed = [&](const std::vector<std::size_t>& from, const std::vector<std::size_t>& to) {
        std::vector<double> d;
        for (auto u : from) {
            double best = INFINITY;
            for (auto v : to) best = std::min(best, oracle::sq_dist(a.dims, u, v, s));
            d.push_back(std::sqrt(best));
        }
        std::sort(d.begin(), d.end());
        return d[static_cast<std::size_t>(std::ceil(0.95 * d.size())) - 1];
    };
    return std::max(directed(sa, sb), directed(sb, sa));
}

}  // namespace

TEST_CASE("iou examples and properties") {
    const Dims d{1, 1, 4};
    Mask3D a(d), b(d);
    a.data = {1, 1, 0, 0};
    b.data = {0, 1, 1, 0};
    CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
    CHECK(iou(a, a) == 1.0);
    Mask3D c(d);
    c.data = {0, 0, 0, 1};
    CHECK(iou(a, c) == 0.0);
    CHECK(iou(Mask3D(d), Mask3D(d)) == 1.0);
    CHECK_THROWS_AS(iou(a, Mask3D({1, 1, 3})), ShapeError);
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
        const auto p = random_mask({4, 4, 4}, rng, 0.4), g = random_mask({4, 4, 4}, rng, 0.4);
        const double v = iou(p, g);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(v == iou(g, p));
    }
}

TEST_CASE("surface extraction") {
    Mask3D one({5, 5, 5});
    one.at(2, 2, 2) = 1;
    CHECK(extract_surface(one) == std::vector<std::size_t>{one.dims.index(2, 2, 2)});
    const auto c = cube({7, 7, 7}, 2, 2, 2, 3);
    const auto s = extract_surface(c);
    CHECK(s.size() == 26);
    for (auto v : s) CHECK(v != c.dims.index(3, 3, 3));
    CHECK(std::is_sorted(s.begin(), s.end()));
    // full volume: every voxel on a face, 4^3 - 2^3
    CHECK(extract_surface(Mask3D({4, 4, 4}, 1)).size() == 56);
    CHECK_THROWS_AS(extract_surface(Mask3D({3, 3, 3})), EmptyMaskError);
}

TEST_CASE("surface voxels are foreground with a background 6-neighbour") {
    Rng rng(3);
    for (int t = 0; t < 30; ++t) {
        const auto m = random_mask({5, 6, 4}, rng, 0.6);
        const auto s = extract_surface(m);
        std::vector<bool> listed(m.data.size(), false);
        for (auto v : s) listed[v] = true;
        for (std::size_t v = 0; v < m.data.size(); ++v) {
            const auto c = m.dims.coords(v);
            bool boundary = false;
            const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
            for (auto& o : off) {
                const int i = c[0] + o[0], j = c[1] + o[1], k = c[2] + o[2];
                if (i < 0 || j < 0 || k < 0 || i >= m.dims.h || j >= m.dims.w || k >= m.dims.d || !m.at(i, j, k)) {
                    boundary = true;
                }
            }
            CHECK(listed[v] == (m.data[v] && boundary));
        }
    }
}

TEST_CASE("distance transform examples") {
    Mask3D seed({6, 6, 2});
    seed.at(0, 0, 0) = 1;
    const auto dt = distance_transform(seed, {1, 1, 1});
    CHECK(dt.data[seed.dims.index(3, 4, 0)] == 5.0f);
    CHECK(dt.data[seed.dims.index(0, 0, 0)] == 0.0f);
    const auto an = distance_transform(seed, {2, 1, 1});
    CHECK(an.data[seed.dims.index(1, 0, 0)] == 2.0f);
    CHECK_THROWS_AS(distance_transform(Mask3D({2, 2, 2}), {1, 1, 1}), EmptyMaskError);
}

TEST_CASE("distance transform equals the all-pairs oracle on random anisotropic masks") {
    Rng rng(77);
    std::uniform_int_distribution<int> side(1, 8);
    std::uniform_real_distribution<float> sp(0.3f, 3.0f);
    std::uniform_real_distribution<double> density(0.01, 0.5);
    for (int t = 0; t < 120; ++t) {
        const Dims d{side(rng), side(rng), side(rng)};
        const Spacing s{sp(rng), sp(rng), sp(rng)};
        const auto m = random_mask(d, rng, density(rng));
        const auto dt = distance_transform(m, s);
        const auto expect = oracle::distance(m, s);
        int worst_ulps = 0;
        for (std::size_t v = 0; v < m.data.size(); ++v) {
            const float a = dt.data[v], b = expect[v];
            int ulps = 0;
            for (float x = std::min(a, b); x < std::max(a, b); x = std::nextafter(x, INFINITY)) ++ulps;
            worst_ulps = std::max(worst_ulps, ulps);
        }
        CHECK(worst_ulps <= 1);
    }
}

TEST_CASE("nearest-rank percentile") {
    CHECK(nearest_rank_percentile({5, 1, 4, 2, 3}, 0.95) == 5);
    CHECK(nearest_rank_percentile({5, 1, 4, 2, 3}, 0.5) == 3);
    std::vector<double> hundred;
    for (int i = 1; i <= 100; ++i) hundred.push_back(i);
    CHECK(nearest_rank_percentile(hundred, 0.95) == 95);
    CHECK(nearest_rank_percentile({7}, 0.95) == 7);
}

TEST_CASE("hd95 on translated cubes") {
    const Dims d{10, 10, 10};
    const auto a = cube(d, 3, 3, 3, 4), b = cube(d, 4, 3, 3, 4);
    CHECK(hd95(a, a, {1, 1, 1}) == 0.0);
    CHECK(hd95(a, b, {1, 1, 1}) == 1.0);
    CHECK(hd95(a, b, {2, 1, 1}) == 2.0);
    CHECK(brute_hd95(a, b, {1, 1, 1}) == 1.0);
    CHECK(brute_hd95(a, b, {2, 1, 1}) == 2.0);
    CHECK_THROWS_AS(hd95(a, Mask3D(d), {1, 1, 1}), EmptyMaskError);
    CHECK_THROWS_AS(hd95(Mask3D(d), a, {1, 1, 1}), EmptyMaskError);
}

TEST_CASE("hd95 matches brute force, is symmetric and scales with spacing") {
    Rng rng(9);
    std::uniform_real_distribution<float> sp(0.5f, 2.0f);
    for (int t = 0; t < 40; ++t) {
        const Dims d{6, 7, 5};
        const auto p = random_mask(d, rng, 0.3), g = random_mask(d, rng, 0.3);
        const Spacing s{sp(rng), sp(rng), sp(rng)};
        const double h = hd95(p, g, s);
        CHECK(h == doctest::Approx(brute_hd95(p, g, s)).epsilon(1e-6));
        CHECK(h == hd95(g, p, s));
        const Spacing s3{3 * s[0], 3 * s[1], 3 * s[2]};
        CHECK(hd95(p, g, s3) == doctest::Approx(3 * h).epsilon(1e-5));
    }
}

TEST_CASE("volume diagonal") {
    CHECK(volume_diagonal_mm({32, 32, 32}, {1, 1, 1}) == doctest::Approx(31.0 * std::sqrt(3.0)));
}
