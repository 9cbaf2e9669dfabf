#include "trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "metrics.hpp"
#include "uncertainty.hpp"

namespace voxseed {

namespace {

constexpr std::uint64_t kInitTag = 0x696e6974;
constexpr std::uint64_t kStepTag = 0x73746570;
constexpr std::uint64_t kEpochTag = 0x65706f63;

const char* scope_name(EntropyScope s) { return s == EntropyScope::all ? "all" : "unreliable"; }

void scale(FeatureMap& f, float s) {
    for (auto& x : f.data) x *= s;
}

void add_scaled(FeatureMap& dst, const FeatureMap& src, float s) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += s * src.data[i];
}

ScalarGrid scaled(const ScalarGrid& g, float s) {
    ScalarGrid out = g;
    for (auto& x : out.data) x *= s;
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    auto at_least_one = [](int v, const char* what) {
        if (v < 1) throw InvalidSpec(std::string(what) + " must be >= 1");
    };
    if (epochs < 0) throw InvalidSpec("epochs must be >= 0");
    at_least_one(batch_labeled, "batch_labeled");
    at_least_one(batch_unlabeled, "batch_unlabeled");
    at_least_one(mc_passes, "M");
    at_least_one(k, "k");
    at_least_one(runs, "l");
    if (batch_labeled != batch_unlabeled) throw InvalidSpec("batch_labeled and batch_unlabeled must be equal");
    if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw InvalidSpec("ema_decay must be in [0, 1]");
    if (!(teacher_noise >= 0.0) || !std::isfinite(teacher_noise)) throw InvalidSpec("teacher_noise must be >= 0");
    if (!(student_noise >= 0.0) || !std::isfinite(student_noise)) throw InvalidSpec("student_noise must be >= 0");
    if (!(band >= 1.0) || !std::isfinite(band)) throw InvalidSpec("band must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidSpec("lr must be > 0");
    try {
        net().validate();
    } catch (const Error& e) {
        throw InvalidSpec(e.what());
    }
}

NetConfig TrainConfig::net() const {
    NetConfig c;
    c.levels = levels;
    c.base_filters = base_filters;
    c.dropout_rate = dropout;
    return c;
}

AdamHyper TrainConfig::adam() const {
    AdamHyper h;
    h.lr = lr;
    return h;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_labeled", c.batch_labeled},
                       {"batch_unlabeled", c.batch_unlabeled},
                       {"M", c.mc_passes},
                       {"k", c.k},
                       {"l", c.runs},
                       {"ema_decay", c.ema_decay},
                       {"teacher_noise", c.teacher_noise},
                       {"student_noise", c.student_noise},
                       {"dropout", c.dropout},
                       {"kernel", c.kernel.kernel_name()},
                       {"reducer", c.kernel.reducer_name()},
                       {"band", c.band},
                       {"use_nn", c.use_nn},
                       {"use_en", c.use_en},
                       {"semi_supervised", c.semi_supervised},
                       {"seed", c.seed},
                       {"lr", c.lr},
                       {"levels", c.levels},
                       {"base_filters", c.base_filters},
                       {"en_scope", scope_name(c.en_scope)}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    if (!j.is_object()) throw InvalidSpec("train config must be a JSON object");
    c = TrainConfig{};
    std::string kernel = c.kernel.kernel_name();
    std::string reducer = c.kernel.reducer_name();
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "epochs") c.epochs = value.get<int>();
            else if (key == "batch_labeled") c.batch_labeled = value.get<int>();
            else if (key == "batch_unlabeled") c.batch_unlabeled = value.get<int>();
            else if (key == "M") c.mc_passes = value.get<int>();
            else if (key == "k") c.k = value.get<int>();
            else if (key == "l") c.runs = value.get<int>();
            else if (key == "ema_decay") c.ema_decay = value.get<double>();
            else if (key == "teacher_noise") c.teacher_noise = value.get<double>();
            else if (key == "student_noise") c.student_noise = value.get<double>();
            else if (key == "dropout") c.dropout = value.get<double>();
            else if (key == "kernel") kernel = value.get<std::string>();
            else if (key == "reducer") reducer = value.get<std::string>();
            else if (key == "band") c.band = value.get<double>();
            else if (key == "use_nn") c.use_nn = value.get<bool>();
            else if (key == "use_en") c.use_en = value.get<bool>();
            else if (key == "semi_supervised") c.semi_supervised = value.get<bool>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "lr") c.lr = value.get<double>();
            else if (key == "levels") c.levels = value.get<int>();
            else if (key == "base_filters") c.base_filters = value.get<int>();
            else if (key == "en_scope") {
                const auto s = value.get<std::string>();
                if (s == "all") c.en_scope = EntropyScope::all;
                else if (s == "unreliable") c.en_scope = EntropyScope::unreliable;
                else throw InvalidSpec("en_scope must be 'all' or 'unreliable', got '" + s + "'");
            } else {
                throw InvalidSpec("unknown train config key '" + key + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw InvalidSpec("train config key '" + key + "': " + e.what());
        }
    }
    try {
        c.kernel = KernelChoice::parse(kernel, reducer);
    } catch (const InvalidArgument& e) {
        throw InvalidSpec(e.what());
    }
}

TrainState TrainState::initial(const TrainConfig& config, std::int64_t total_iterations) {
    config.validate();
    Rng rng = derive_rng(config.seed, {kInitTag});
    TrainState s;
    s.student = he_init(config.net(), rng);
    s.teacher = s.student;
    s.optimizer = OptimizerState::fresh(s.student, config.adam());
    s.total_iterations = std::max<std::int64_t>(1, total_iterations);
    return s;
}

Checkpoint TrainState::checkpoint() const {
    return {student, teacher, optimizer, iteration, total_iterations};
}

LossReport train_step(TrainState& state, std::span<const LabeledRef> labeled,
                      std::span<const Volume3D* const> unlabeled, const TrainConfig& config) {
    const bool semi = config.semi_supervised;
    if (labeled.empty()) throw InvalidArgument("train_step: labeled batch is empty");
    if (semi && unlabeled.size() != labeled.size()) {
        throw InvalidArgument("train_step: labeled and unlabeled batches must be nonempty and equal sized");
    }
    for (const auto& l : labeled) {
        if (!l.volume || !l.mask) throw InvalidArgument("train_step: labeled entry without volume or mask");
    }

    const std::int64_t t = state.iteration;
    const std::int64_t tn = state.total_iterations;
    const double w_ua = ramp_up(static_cast<double>(t), {kUncertaintyWeight, tn});
    const double w_ps = ramp_up(static_cast<double>(t), {kPseudoLabelWeight, tn});
    Rng rng = derive_rng(config.seed, {kStepTag, static_cast<std::uint64_t>(t)});

    NetParams grads = state.student.zeros_like();
    const FeatureMap none;

    double l_s = 0.0;
    std::size_t n_supervised = 0;
    const float inv_l = 1.0f / static_cast<float>(labeled.size());
    for (const auto& item : labeled) {
        const Volume3D noisy = add_gaussian_noise(*item.volume, config.student_noise, rng);
        auto trace = forward(state.student, noisy, Mode::train, rng);
        const auto loss = supervised_loss(softmax_over_classes(trace.logits), *item.mask);
        l_s += static_cast<double>(loss.value) / labeled.size();
        n_supervised += loss.count;
        FeatureMap d_logits = loss.d_logits;
        scale(d_logits, inv_l);
        backward_accumulate(state.student, trace, d_logits, none, grads);
    }

    double l_ua = 0.0, l_nn = 0.0, l_en = 0.0;
    std::size_t n_reliable = 0, n_unreliable = 0;
    if (semi) {
        const double threshold = uncertainty_threshold(t, tn);
        const float inv_u = 1.0f / static_cast<float>(unlabeled.size());
        for (std::size_t b = 0; b < unlabeled.size(); ++b) {
            const Volume3D& xu = *unlabeled[b];
            const McResult mc = mc_uncertainty(state.teacher, xu, config.mc_passes, config.teacher_noise, rng);
            const Mask3D reliable = reliability_mask(mc.entropy, threshold);
            const Mask3D unreliable = reliable.complement();
            n_reliable += reliable.count();
            n_unreliable += unreliable.count();

            const Volume3D noisy = add_gaussian_noise(xu, config.student_noise, rng);
            auto trace = forward(state.student, noisy, Mode::train, rng);
            const ProbMap probs = softmax_over_classes(trace.logits);

            const auto ua = loss_ua(mc.pseudo, probs, reliable);
            l_ua += static_cast<double>(ua.value) / unlabeled.size();
            FeatureMap d_logits = ua.d_logits;
            scale(d_logits, static_cast<float>(w_ua) * inv_u);

            FeatureMap d_pen;
            if (config.use_nn || config.use_en) {
                const LabeledRef& ref = labeled[b];
                const Volume3D noisy_ref = add_gaussian_noise(*ref.volume, config.teacher_noise, rng);
                const auto teacher_trace = forward(state.teacher, noisy_ref, Mode::eval, rng, false);
                const auto ens = ensemble_similarity(*ref.mask, teacher_trace.penultimate, trace.penultimate, config.k,
                                                     config.runs, config.band, config.kernel, rng);
                if (config.use_nn) {
                    const Mask3D y_nn = pseudo_label_nn(ens.k_plus, ens.k_minus);
                    const auto nn = loss_nn(y_nn, probs, unreliable);
                    l_nn += static_cast<double>(nn.value) / unlabeled.size();
                    add_scaled(d_logits, nn.d_logits, static_cast<float>(w_ps) * inv_u);
                }
                if (config.use_en) {
                    const auto en = loss_entropy_min(
                        ens.k_plus, ens.k_minus, config.en_scope == EntropyScope::unreliable ? &unreliable : nullptr);
                    l_en += static_cast<double>(en.value) / unlabeled.size();
                    const float s = static_cast<float>(w_ps) * inv_u;
                    d_pen = ensemble_similarity_backward(ens, trace.penultimate, config.kernel, scaled(en.d_plus, s),
                                                         scaled(en.d_minus, s));
                }
            }
            backward_accumulate(state.student, trace, d_logits, d_pen, grads);
        }
    }

    LossReport report = total_loss(l_s, l_ua, l_nn, l_en, t, tn);
    report.supervised_voxels = n_supervised;
    report.reliable_voxels = n_reliable;
    report.unreliable_voxels = n_unreliable;
    const std::size_t n_u = n_reliable + n_unreliable;
    report.reliable_fraction = n_u ? static_cast<double>(n_reliable) / n_u : 0.0;

    adam_step(state.student, grads, state.optimizer);
    ema_update(state.teacher, state.student, config.ema_decay);
    ++state.iteration;
    return report;
}

std::vector<CaseScore> score_cases(const NetParams& net, std::span<const Case> cases) {
    std::vector<CaseScore> out;
    out.reserve(cases.size());
    Rng unused(0);
    for (const auto& c : cases) {
        if (!c.mask) throw InvalidArgument("case " + std::to_string(c.id) + " has no mask to score against");
        const auto trace = forward(net, c.volume, Mode::eval, unused, false);
        const Mask3D pred = argmax_classes(softmax_over_classes(trace.logits));
        CaseScore s;
        s.id = c.id;
        s.iou = iou(pred, *c.mask);
        if (pred.count() == 0 || c.mask->count() == 0) {
            s.empty_prediction = pred.count() == 0;
            s.hd95 = volume_diagonal_mm(pred.dims, c.volume.spacing);
        } else {
            s.hd95 = hd95(pred, *c.mask, c.volume.spacing);
        }
        out.push_back(s);
    }
    return out;
}

ValidationScore validate(const TrainState& state, std::span<const Case> validation) {
    if (validation.empty()) throw InvalidArgument("validate: validation set is empty");
    const auto scores = score_cases(state.teacher, validation);
    ValidationScore v;
    for (const auto& s : scores) {
        v.iou += s.iou;
        v.hd95 += s.hd95;
    }
    v.iou /= static_cast<double>(scores.size());
    v.hd95 /= static_cast<double>(scores.size());
    return v;
}

std::int64_t iterations_per_epoch(const TrainConfig& config, std::size_t n_labeled, std::size_t n_unlabeled) {
    const std::size_t pool = std::max(n_labeled, n_unlabeled);
    const std::size_t batch = static_cast<std::size_t>(config.batch_labeled);
    return static_cast<std::int64_t>((pool + batch - 1) / batch);
}

namespace {

// Successive independent shuffles of [0, n) concatenated to `length` entries.
std::vector<std::size_t> cycled_order(std::size_t n, std::size_t length, Rng& rng) {
    std::vector<std::size_t> out;
    out.reserve(length + n);
    std::vector<std::size_t> perm(n);
    while (out.size() < length) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        out.insert(out.end(), perm.begin(), perm.end());
    }
    out.resize(length);
    return out;
}

std::string epoch_line(int epoch, std::int64_t iteration, const ValidationScore& v, bool best) {
    nlohmann::json j{{"epoch", epoch}, {"iter", iteration}, {"val_iou", v.iou}, {"val_hd95", v.hd95}, {"best", best}};
    return j.dump();
}

}  // namespace

FitResult fit(const TrainConfig& config, const DatasetSplit& data, const LineSink& log) {
    config.validate();
    if (data.labeled.empty()) throw InvalidArgument("fit: dataset has no labeled cases");
    if (data.validation.empty()) throw InvalidArgument("fit: dataset has no validation cases");
    for (const auto& c : data.labeled) {
        if (!c.mask) throw InvalidArgument("fit: labeled case " + std::to_string(c.id) + " has no mask");
    }
    TrainConfig cfg = config;
    // Without unlabeled data the run is the plain supervised baseline.
    if (data.unlabeled.empty()) cfg.semi_supervised = false;

    const std::size_t n_l = data.labeled.size();
    const std::size_t n_u = data.unlabeled.size();
    const std::int64_t per_epoch = iterations_per_epoch(cfg, n_l, n_u);
    TrainState state = TrainState::initial(cfg, per_epoch * cfg.epochs);

    FitResult result;
    result.best = state.checkpoint();
    result.last = result.best;
    if (cfg.epochs == 0) {
        result.best_score = validate(state, data.validation);
        return result;
    }

    const auto emit = [&](const std::string& line) {
        if (log) log(line);
    };
    const std::size_t batch = static_cast<std::size_t>(cfg.batch_labeled);
    bool have_best = false;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng order_rng = derive_rng(cfg.seed, {kEpochTag, static_cast<std::uint64_t>(epoch)});
        const std::size_t slots = static_cast<std::size_t>(per_epoch) * batch;
        const auto l_order = cycled_order(n_l, slots, order_rng);
        const auto u_order = n_u ? cycled_order(n_u, slots, order_rng) : std::vector<std::size_t>{};
        for (std::int64_t it = 0; it < per_epoch; ++it) {
            std::vector<LabeledRef> lb;
            std::vector<const Volume3D*> ub;
            for (std::size_t b = 0; b < batch; ++b) {
                const auto& c = data.labeled[l_order[it * batch + b]];
                lb.push_back({&c.volume, &*c.mask});
                if (cfg.semi_supervised) ub.push_back(&data.unlabeled[u_order[it * batch + b]].volume);
            }
            const TrainState healthy = state;
            try {
                emit(train_step(state, lb, ub, cfg).to_json_line());
            } catch (const TrainingDivergence& e) {
                result.last = healthy.checkpoint();
                result.divergence = e.what();
                emit(nlohmann::json{{"iter", healthy.iteration}, {"error", e.what()}}.dump());
                if (!have_best) result.best = result.last;
                return result;
            }
        }
        const ValidationScore v = validate(state, data.validation);
        const bool improved = !have_best || v.hd95 < result.best_score.hd95;
        if (improved) {
            have_best = true;
            result.best = state.checkpoint();
            result.best_epoch = epoch;
            result.best_score = v;
        }
        emit(epoch_line(epoch, state.iteration, v, improved));
    }
    result.last = state.checkpoint();
    return result;
}

}  // namespace voxseed
