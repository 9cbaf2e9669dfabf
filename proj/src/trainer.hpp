#pragma once

// Mean-teacher training loop with uncertainty-filtered and
// embedding-propagated pseudo-labels.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "json.hpp"
#include "losses.hpp"
#include "net3d.hpp"
#include "nn_pseudolabel.hpp"
#include "phantom.hpp"

namespace voxseed {

enum class EntropyScope { all, unreliable };

struct TrainConfig {
    int epochs = 40;
    int batch_labeled = 2;
    int batch_unlabeled = 2;
    int mc_passes = 5;
    int k = 16;
    int runs = 5;
    double ema_decay = 0.99;
    double teacher_noise = 0.01;
    double student_noise = 0.02;
    double dropout = 0.15;
    KernelChoice kernel;
    double band = 2.0;
    bool use_nn = true;
    bool use_en = true;
    // Off: unlabeled cases are ignored, but the epoch length is unchanged.
    bool semi_supervised = true;
    std::uint64_t seed = 0;
    double lr = 1e-4;
    int levels = 3;
    int base_filters = 8;
    EntropyScope en_scope = EntropyScope::all;

    void validate() const;
    NetConfig net() const;
    AdamHyper adam() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainState {
    NetParams student;
    OptimizerState optimizer;
    NetParams teacher;
    std::int64_t iteration = 0;
    std::int64_t total_iterations = 1;

    static TrainState initial(const TrainConfig& config, std::int64_t total_iterations);
    Checkpoint checkpoint() const;
};

struct LabeledRef {
    const Volume3D* volume = nullptr;
    const Mask3D* mask = nullptr;
};

// One optimisation step. Unlabeled image b is paired with labeled image b for
// embedding correspondence. The unlabeled batch may be empty only when the
// semi-supervised losses are disabled.
LossReport train_step(TrainState& state, std::span<const LabeledRef> labeled,
                      std::span<const Volume3D* const> unlabeled, const TrainConfig& config);

struct CaseScore {
    int id = 0;
    double iou = 0.0;
    double hd95 = 0.0;
    bool empty_prediction = false;
};

// Teacher-free helper: eval-mode argmax of `net` on each case, scored against
// its mask. Empty predictions score the volume diagonal as HD95.
std::vector<CaseScore> score_cases(const NetParams& net, std::span<const Case> cases);

struct ValidationScore {
    double iou = 0.0;
    double hd95 = 0.0;
};

ValidationScore validate(const TrainState& state, std::span<const Case> validation);

std::int64_t iterations_per_epoch(const TrainConfig& config, std::size_t n_labeled, std::size_t n_unlabeled);

struct FitResult {
    Checkpoint best;
    Checkpoint last;
    int best_epoch = 0;  // 0 = initial weights
    ValidationScore best_score;
    std::optional<std::string> divergence;  // set when a step aborted; `last` is the last healthy state
};

using LineSink = std::function<void(const std::string&)>;

// Writes one JSON line per step and per epoch-end validation to `log`.
FitResult fit(const TrainConfig& config, const DatasetSplit& data, const LineSink& log = {});

}  // namespace voxseed
