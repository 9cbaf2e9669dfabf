#pragma once

// File-level workflows behind the command-line tool: dataset generation,
// training runs, evaluation tables, ablation sweeps and pseudo-label dumps.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "phantom.hpp"
#include "trainer.hpp"

namespace voxseed {

namespace fs = std::filesystem;

struct GenDataOptions {
    fs::path out;
    int n_train = 60;
    int n_labeled = 4;
    int n_val = 12;
    int n_test = 20;
    std::uint64_t seed = 0;
    PhantomRanges ranges;
};

// Writes case_<id>_vol.vv1 for every case, case_<id>_mask.vv1 for cases that
// keep their labels, and manifest.json. Returns the manifest path.
fs::path gen_data(const GenDataOptions& options);

DatasetSplit load_manifest(const fs::path& manifest);

TrainConfig load_train_config(const fs::path& path);

// Writes log.jsonl, best.vck1 and final.vck1 into `out_dir`. On divergence the
// last healthy state is saved as final.vck1 and TrainingDivergence is rethrown.
FitResult run_train(const TrainConfig& config, const DatasetSplit& data, const fs::path& out_dir,
                    const LineSink& progress = {});

// Scores the checkpoint's teacher on one split ("labeled", "validation" or
// "test") and writes one CSV row per case. `lines` receives one JSON line per
// case and a final aggregate line.
std::vector<CaseScore> run_eval(const fs::path& checkpoint, const DatasetSplit& data, const std::string& split,
                                const fs::path& out_csv, const LineSink& lines = {});

struct AblationRow {
    std::string name;
    bool semi_supervised = true;
    bool use_nn = false;
    bool use_en = false;
    std::vector<double> iou;   // per seed, mean over test cases
    std::vector<double> hd95;  // per seed, mean over test cases
    double mean_iou() const;
    double mean_hd95() const;
};

// Supervised baseline plus the UA, UA+NN, UA+NN+EN and UA+EN rows, each
// trained once per seed and scored on the test split. Writes ablation.csv
// (one row per configuration) and ablation_runs.csv (one row per run).
std::vector<AblationRow> run_ablate(const TrainConfig& base, const DatasetSplit& data,
                                    const std::vector<std::uint64_t>& seeds, const fs::path& out_dir,
                                    const LineSink& progress = {});

struct PseudolabelOptions {
    TrainConfig config;
    std::optional<int> reference_id;  // labeled case supplying the embeddings; first labeled case by default
};

// Dumps entropy, lambda, reliable, pseudo_teacher, k_plus, k_minus and
// pseudo_nn as VV1 files into `out_dir`.
void run_pseudolabel(const fs::path& checkpoint, const DatasetSplit& data, int case_id, const fs::path& out_dir,
                     const PseudolabelOptions& options);

}  // namespace voxseed
