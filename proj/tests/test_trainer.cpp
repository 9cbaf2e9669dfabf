#include <cmath>

#include "doctest.h"
#include "errors.hpp"
#include "trainer.hpp"

using namespace voxseed;

namespace {

TrainConfig tiny_config() {
    TrainConfig c;
    c.epochs = 2;
    c.levels = 2;
    c.base_filters = 4;
    c.mc_passes = 2;
    c.k = 4;
    c.runs = 2;
    c.lr = 1e-3;
    c.seed = 3;
    return c;
}

PhantomRanges small_ranges() {
    PhantomRanges r;
    r.dims = {16, 16, 16};
    r.radius_min = 3.0;
    r.radius_max = 4.0;
    r.gap_min = 0.5;
    r.gap_max = 1.0;
    return r;
}

const DatasetSplit& tiny_data() {
    static const DatasetSplit d = make_dataset(6, 2, 2, 2, small_ranges(), 11);
    return d;
}

bool same_params(const NetParams& a, const NetParams& b) {
    if (a.tensors.size() != b.tensors.size()) return false;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        if (a.tensors[i].data != b.tensors[i].data) return false;
    }
    return true;
}

struct Batch {
    std::vector<LabeledRef> labeled;
    std::vector<const Volume3D*> unlabeled;
};

Batch first_batch(const DatasetSplit& d) {
    Batch b;
    for (int i = 0; i < 2; ++i) {
        b.labeled.push_back({&d.labeled[i].volume, &*d.labeled[i].mask});
        b.unlabeled.push_back(&d.unlabeled[i].volume);
    }
    return b;
}

}  // namespace

TEST_CASE("config defaults, validation and JSON") {
    const TrainConfig c;
    CHECK(c.epochs == 40);
    CHECK(c.mc_passes == 5);
    CHECK(c.k == 16);
    CHECK(c.runs == 5);
    CHECK(c.ema_decay == 0.99);
    CHECK(c.kernel == KernelChoice{Kernel::cosine, Reducer::mean});
    CHECK_NOTHROW(c.validate());

    const nlohmann::json j = c;
    CHECK(j.at("M") == 5);
    CHECK(j.at("l") == 5);
    CHECK(j.at("kernel") == "cosine");
    CHECK(j.at("reducer") == "mean");
    TrainConfig back = j.get<TrainConfig>();
    CHECK(nlohmann::json(back) == j);

    auto partial = nlohmann::json::parse(R"({"epochs": 3, "kernel": "euclidean", "reducer": "max"})");
    const auto p = partial.get<TrainConfig>();
    CHECK(p.epochs == 3);
    CHECK(p.kernel.kernel == Kernel::euclidean);
    CHECK(p.k == 16);
    CHECK_THROWS(nlohmann::json::parse(R"({"epoch": 3})").get<TrainConfig>());

    auto bad = c;
    bad.mc_passes = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidSpec);
    bad = c;
    bad.batch_unlabeled = 3;
    CHECK_THROWS_AS(bad.validate(), InvalidSpec);
    bad = c;
    bad.ema_decay = 1.5;
    CHECK_THROWS_AS(bad.validate(), InvalidSpec);
}

TEST_CASE("iterations per epoch cycle the smaller pool") {
    TrainConfig c;
    CHECK(iterations_per_epoch(c, 4, 56) == 28);
    CHECK(iterations_per_epoch(c, 5, 0) == 3);
    CHECK(iterations_per_epoch(c, 60, 3) == 30);
}

TEST_CASE("a training step is bitwise reproducible") {
    const auto& d = tiny_data();
    const auto cfg = tiny_config();
    auto b = first_batch(d);
    auto s1 = TrainState::initial(cfg, 10), s2 = TrainState::initial(cfg, 10);
    const auto r1 = train_step(s1, b.labeled, b.unlabeled, cfg);
    const auto r2 = train_step(s2, b.labeled, b.unlabeled, cfg);
    CHECK(same_params(s1.student, s2.student));
    CHECK(same_params(s1.teacher, s2.teacher));
    CHECK(r1.to_json_line() == r2.to_json_line());
    CHECK(s1.iteration == 1);
    CHECK(r1.total == doctest::Approx(r1.supervised + r1.w_ua * r1.uncertainty + r1.w_ps * (r1.matching + r1.entropy)));
    CHECK(r1.matching >= 0.0);
    CHECK(r1.entropy >= 0.0);
    CHECK(r1.entropy <= std::log(2.0) + 1e-6);
}

TEST_CASE("ema decay 1 keeps the teacher fixed") {
    const auto& d = tiny_data();
    auto cfg = tiny_config();
    cfg.ema_decay = 1.0;
    auto b = first_batch(d);
    auto s = TrainState::initial(cfg, 10);
    const auto teacher0 = s.teacher;
    const auto student0 = s.student;
    for (int i = 0; i < 3; ++i) train_step(s, b.labeled, b.unlabeled, cfg);
    CHECK(same_params(s.teacher, teacher0));
    CHECK(!same_params(s.student, student0));
}

TEST_CASE("a fully uncertain teacher reduces the step to supervised training") {
    const auto& d = tiny_data();
    auto semi = tiny_config();
    semi.use_nn = semi.use_en = false;
    auto sup = semi;
    sup.semi_supervised = false;
    auto b = first_batch(d);
    auto a = TrainState::initial(semi, 10), c = TrainState::initial(semi, 10);
    // uniform teacher: entropy ln 2 everywhere, above the early threshold
    a.teacher = make_params<float>(semi.net());
    c.teacher = a.teacher;
    const auto ra = train_step(a, b.labeled, b.unlabeled, semi);
    const auto rc = train_step(c, b.labeled, {}, sup);
    CHECK(ra.reliable_voxels == 0);
    CHECK(ra.uncertainty == 0.0);
    CHECK(ra.total == rc.total);
    CHECK(same_params(a.student, c.student));
    CHECK(same_params(a.teacher, c.teacher));
}

TEST_CASE("train step argument checks") {
    const auto& d = tiny_data();
    const auto cfg = tiny_config();
    auto b = first_batch(d);
    auto s = TrainState::initial(cfg, 10);
    CHECK_THROWS_AS(train_step(s, {}, b.unlabeled, cfg), InvalidArgument);
    CHECK_THROWS_AS(train_step(s, b.labeled, std::span<const Volume3D* const>(b.unlabeled).first(1), cfg),
                    InvalidArgument);
}

TEST_CASE("empty predictions score the volume diagonal") {
    const auto data = make_dataset(2, 2, 3, 1, PhantomRanges{}, 5);
    TrainConfig cfg;
    auto net = make_params<float>(cfg.net());
    net.find("out.bias").data = {5.0f, -5.0f};
    const auto scores = score_cases(net, data.validation);
    REQUIRE(scores.size() == 3);
    for (const auto& s : scores) {
        CHECK(s.empty_prediction);
        CHECK(s.iou == 0.0);
        CHECK(s.hd95 == doctest::Approx(std::sqrt(3.0 * 31 * 31)).epsilon(1e-9));
        CHECK(s.hd95 == doctest::Approx(53.69).epsilon(1e-4));
    }
    auto state = TrainState::initial(cfg, 1);
    state.teacher = net;
    const auto v = validate(state, data.validation);
    CHECK(v.hd95 == doctest::Approx(53.69).epsilon(1e-4));
    // order independence
    std::vector<Case> reversed(data.validation.rbegin(), data.validation.rend());
    const auto w = validate(state, reversed);
    CHECK(w.iou == v.iou);
    CHECK(w.hd95 == v.hd95);
}

TEST_CASE("zero epochs returns the initial model") {
    auto cfg = tiny_config();
    cfg.epochs = 0;
    const auto r = fit(cfg, tiny_data());
    CHECK(r.best_epoch == 0);
    CHECK(same_params(r.best.student, TrainState::initial(cfg, 1).student));
    CHECK(same_params(r.best.teacher, r.best.student));
}

TEST_CASE("fit is deterministic and logs every step and epoch") {
    const auto cfg = tiny_config();
    std::vector<std::string> lines;
    const auto a = fit(cfg, tiny_data(), [&](const std::string& l) { lines.push_back(l); });
    const auto b = fit(cfg, tiny_data());
    CHECK(!a.divergence);
    CHECK(encode_vck1(a.best) == encode_vck1(b.best));
    CHECK(encode_vck1(a.last) == encode_vck1(b.last));
    const auto per_epoch = iterations_per_epoch(cfg, 2, 4);
    CHECK(lines.size() == std::size_t(cfg.epochs * (per_epoch + 1)));
    CHECK(a.last.iteration == cfg.epochs * per_epoch);
    CHECK(a.last.total_iterations == cfg.epochs * per_epoch);
    int epochs_seen = 0;
    double best = INFINITY;
    for (const auto& l : lines) {
        const auto j = nlohmann::json::parse(l);
        if (!j.contains("epoch")) continue;
        ++epochs_seen;
        const double hd = j.at("val_hd95");
        CHECK(j.at("best") == (hd < best));
        best = std::min(best, hd);
    }
    CHECK(epochs_seen == cfg.epochs);
    CHECK(a.best_score.hd95 == best);
}

TEST_CASE("without unlabeled data fit runs the supervised baseline") {
    auto data = tiny_data();
    data.unlabeled.clear();
    auto cfg = tiny_config();
    cfg.epochs = 1;
    std::vector<std::string> lines;
    const auto r = fit(cfg, data, [&](const std::string& l) { lines.push_back(l); });
    CHECK(!r.divergence);
    const auto step = nlohmann::json::parse(lines.front());
    CHECK(step.at("L_UA") == 0.0);
    CHECK(step.at("L_NN") == 0.0);
    CHECK(step.at("L_EN") == 0.0);
    CHECK(r.last.iteration == iterations_per_epoch(cfg, 2, 0));
}

TEST_CASE("fit rejects datasets without labels or validation") {
    auto data = tiny_data();
    data.validation.clear();
    CHECK_THROWS_AS(fit(tiny_config(), data), InvalidArgument);
    data = tiny_data();
    data.labeled.clear();
    CHECK_THROWS_AS(fit(tiny_config(), data), InvalidArgument);
}
