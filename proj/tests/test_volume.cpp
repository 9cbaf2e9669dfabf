#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "tensor_io.hpp"
#include "volume.hpp"

using namespace voxseed;

TEST_CASE("gaussian noise: zero sigma is the identity") {
    Volume3D v({4, 4, 4}, {1, 1, 1}, 0.5f);
    v.data[7] = -3.0f;
    Rng rng(1);
    CHECK(add_gaussian_noise(v, 0.0, rng).data == v.data);
}

TEST_CASE("gaussian noise: same seed gives identical output and input is untouched") {
    Volume3D v({4, 4, 4}, {1, 1, 1}, 1.0f);
    Rng a(42), b(42);
    const auto x = add_gaussian_noise(v, 0.02, a);
    const auto y = add_gaussian_noise(v, 0.02, b);
    CHECK(x.data == y.data);
    for (float f : v.data) CHECK(f == 1.0f);
}

TEST_CASE("gaussian noise: moments over a million voxels") {
    Volume3D v({100, 100, 100}, {1, 1, 1}, 0.0f);
    Rng rng(7);
    const auto n = add_gaussian_noise(v, 1.0, rng);
    double sum = 0.0, sq = 0.0;
    for (float x : n.data) {
        sum += x;
        sq += double(x) * x;
    }
    const double mean = sum / n.data.size();
    const double sd = std::sqrt(sq / n.data.size() - mean * mean);
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(sd - 1.0) < 0.01);
}

TEST_CASE("gaussian noise: rejects bad sigma") {
    Volume3D v({2, 2, 2}, {1, 1, 1});
    Rng rng(0);
    CHECK_THROWS_AS(add_gaussian_noise(v, -0.1, rng), InvalidArgument);
    CHECK_THROWS_AS(add_gaussian_noise(v, NAN, rng), InvalidArgument);
    CHECK_THROWS_AS(add_gaussian_noise(v, INFINITY, rng), InvalidArgument);
}

TEST_CASE("softmax over two classes") {
    FeatureMap z(2, {1, 1, 3});
    z.at(0, 0) = 0;
    z.at(1, 0) = 0;
    z.at(0, 1) = 0;
    z.at(1, 1) = std::log(3.0f);
    z.at(0, 2) = 1000.0f;
    z.at(1, 2) = 1001.5f;
    const auto p = softmax_over_classes(z);
    CHECK(p.p(0, 0) == doctest::Approx(0.5));
    CHECK(p.p(1, 0) == doctest::Approx(0.5));
    CHECK(p.p(0, 1) == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(p.p(1, 1) == doctest::Approx(0.75).epsilon(1e-6));
    // shift invariance, even for huge logits: (1000, 1001.5) behaves like (0, 1.5)
    FeatureMap small(2, {1, 1, 1});
    small.at(1, 0) = 1.5f;
    const auto q = softmax_over_classes(small);
    CHECK(p.p(0, 2) == q.p(0, 0));
    CHECK(p.p(1, 2) == q.p(1, 0));
}

TEST_CASE("softmax output is a valid probability map for random logits") {
    Rng rng(3);
    std::normal_distribution<float> n(0.0f, 30.0f);
    FeatureMap z(2, {5, 5, 5});
    for (auto& x : z.data) x = n(rng);
    const auto p = softmax_over_classes(z);
    for (std::size_t v = 0; v < z.dims.voxels(); ++v) {
        CHECK(p.p(0, v) >= 0.0f);
        CHECK(p.p(1, v) <= 1.0f);
        CHECK(std::abs(p.p(0, v) + p.p(1, v) - 1.0f) <= 1e-5f);
    }
}

TEST_CASE("softmax rejects channel counts other than two") {
    FeatureMap z(3, {2, 2, 2});
    CHECK_THROWS_AS(softmax_over_classes(z), ShapeError);
}

TEST_CASE("argmax breaks ties towards background") {
    ProbMap p({1, 1, 3});
    p.p(0, 0) = 0.5f, p.p(1, 0) = 0.5f;
    p.p(0, 1) = 0.4f, p.p(1, 1) = 0.6f;
    p.p(0, 2) = 0.9f, p.p(1, 2) = 0.1f;
    const auto m = argmax_classes(p);
    CHECK(m.data == std::vector<std::uint8_t>{0, 1, 0});
}

TEST_CASE("masked mean") {
    ScalarGrid g({1, 1, 4});
    g.data = {1, 2, 3, 4};
    Mask3D m({1, 1, 4});
    m.data = {1, 0, 1, 0};
    CHECK(masked_mean(g, m) == doctest::Approx(2.0));
    CHECK(masked_mean(g, Mask3D({1, 1, 4}, 0)) == 0.0f);
    ScalarGrid c({3, 3, 3}, 2.5f);
    CHECK(masked_mean(c, Mask3D({3, 3, 3}, 1)) == doctest::Approx(2.5));
    CHECK_THROWS_AS(masked_mean(c, Mask3D({3, 3, 2}, 1)), ShapeError);
}

TEST_CASE("masked mean over all ones equals the arithmetic mean") {
    Rng rng(11);
    std::uniform_real_distribution<float> u(-5.0f, 5.0f);
    ScalarGrid g({7, 6, 5});
    double sum = 0.0;
    for (auto& x : g.data) {
        x = u(rng);
        sum += x;
    }
    CHECK(masked_mean(g, Mask3D(g.dims, 1)) == doctest::Approx(sum / g.data.size()).epsilon(1e-6));
}

TEST_CASE("dims and spacing validation") {
    CHECK_THROWS_AS(check_dims({0, 2, 2}), ShapeError);
    CHECK_THROWS_AS(check_spacing({1.0f, 0.0f, 1.0f}), InvalidArgument);
    CHECK_THROWS_AS(check_spacing({1.0f, NAN, 1.0f}), InvalidArgument);
    CHECK_NOTHROW(check_spacing({0.5f, 1.0f, 2.0f}));
    Mask3D bad({1, 1, 2});
    bad.data[1] = 2;
    CHECK_THROWS(check_mask_values(bad));
}

TEST_CASE("layout: D is fastest, then W, then H") {
    Dims d{2, 3, 4};
    CHECK(d.index(0, 0, 1) == 1);
    CHECK(d.index(0, 1, 0) == 4);
    CHECK(d.index(1, 0, 0) == 12);
    for (std::size_t v = 0; v < d.voxels(); ++v) {
        const auto c = d.coords(v);
        CHECK(d.index(c[0], c[1], c[2]) == v);
    }
}

TEST_CASE("VV1 byte layout of a small mask") {
    Mask3D m({1, 1, 2});
    m.data = {0, 1};
    const auto bytes = encode_vv1(to_raw(m, {1.0f, 2.0f, 0.5f}));
    const std::vector<std::uint8_t> expected{'V', 'V', 'O', 'L', 1, 0, 0, 0, 1, 3, 1, 0, 0, 0, 1, 0, 0, 0,
                                             2,   0,   0,   0,   0, 0, 0x80, 0x3f, 0, 0, 0, 0x40, 0, 0, 0, 0x3f,
                                             0,   1};
    CHECK(bytes == expected);
}

TEST_CASE("VV1 round trips volumes, masks, feature and probability maps") {
    const auto dir = std::filesystem::temp_directory_path() / "voxseed_test_volume";
    std::filesystem::create_directories(dir);
    Rng rng(5);
    Volume3D v({3, 4, 5}, {0.5f, 1.0f, 2.0f});
    std::normal_distribution<float> n;
    for (auto& x : v.data) x = n(rng);
    save_volume(dir / "v.vv1", v);
    const auto v2 = load_volume(dir / "v.vv1");
    CHECK(v2.dims == v.dims);
    CHECK(v2.spacing == v.spacing);
    CHECK(v2.data == v.data);

    Mask3D m(v.dims);
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = i % 3 == 0;
    save_mask(dir / "m.vv1", m, v.spacing);
    CHECK(load_mask(dir / "m.vv1") == m);

    FeatureMap f(3, v.dims);
    for (auto& x : f.data) x = n(rng);
    const auto rf = decode_vv1(encode_vv1(to_raw(f, v.spacing)));
    CHECK(rf.dims == std::vector<std::uint32_t>{3, 3, 4, 5});
    CHECK(rf.f32 == f.data);

    ProbMap p(v.dims);
    const auto rp = decode_vv1(encode_vv1(to_raw(p, v.spacing)));
    CHECK(rp.dims == std::vector<std::uint32_t>{2, 3, 4, 5});
    std::filesystem::remove_all(dir);
}

TEST_CASE("VV1 decoding rejects malformed input") {
    Mask3D m({2, 2, 2}, 1);
    auto bytes = encode_vv1(to_raw(m, {1, 1, 1}));
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_vv1(bad_magic), FormatError);
    auto bad_version = bytes;
    bad_version[4] = 2;
    CHECK_THROWS_AS(decode_vv1(bad_version), FormatError);
    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(decode_vv1(truncated), FormatError);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_vv1(trailing), FormatError);
    auto bad_dtype = bytes;
    bad_dtype[8] = 7;
    CHECK_THROWS_AS(decode_vv1(bad_dtype), FormatError);
    CHECK_THROWS_AS(read_vv1("/nonexistent/voxseed.vv1"), IoError);
    // a mask file is not a volume
    CHECK_THROWS_AS(volume_from_raw(decode_vv1(bytes)), FormatError);
}
