// voxseed command-line tool. Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "voxseed/voxseed.h"

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

struct DatasetHandle {
    vs_dataset* ptr = nullptr;
    ~DatasetHandle() { vs_dataset_free(ptr); }
};

void print_line(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }
void print_stdout(const char* line, void*) { std::printf("%s\n", line); }

int report(vs_status status) {
    if (status == VS_OK) return 0;
    std::fprintf(stderr, "error (%s): %s\n", vs_status_name(status), vs_last_error());
    return status == VS_ERR_INVALID_ARGUMENT ? kUsageError : kRuntimeError;
}

int load(const std::string& manifest, DatasetHandle& ds) {
    const vs_status s = vs_dataset_load(manifest.c_str(), &ds.ptr);
    if (s == VS_OK) return 0;
    std::fprintf(stderr, "error (%s): %s\n", vs_status_name(s), vs_last_error());
    return kRuntimeError;
}

int apply_thread_env() {
    const char* env = std::getenv("VOXSEED_THREADS");
    if (!env || !*env) return 0;
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 0) {
        std::fprintf(stderr, "error: VOXSEED_THREADS must be a non-negative integer, got '%s'\n", env);
        return kUsageError;
    }
    return report(vs_set_threads(static_cast<int>(n)));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"voxseed: semi-supervised 3D segmentation with uncertainty-aware pseudo-labels"};
    app.require_subcommand(1);

    std::string out, config, data, checkpoint, split = "test";
    int n_train = 60, n_labeled = 4, n_val = 12, n_test = 20, case_id = 0, reference = -1;
    std::uint64_t seed = 0;
    double delta_max = -1.0, artifact_prob = -1.0;
    std::vector<std::uint64_t> seeds;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic phantom dataset and manifest.json");
    gen->add_option("--out", out, "Output directory")->required();
    gen->add_option("--n-train", n_train, "Training cases (labeled + unlabeled)")->required();
    gen->add_option("--n-labeled", n_labeled, "Training cases that keep their masks")->required();
    gen->add_option("--n-val", n_val, "Validation cases")->required();
    gen->add_option("--n-test", n_test, "Test cases")->required();
    gen->add_option("--seed", seed, "Dataset seed")->required();
    gen->add_option("--delta-max", delta_max, "Upper bound of the shape deformation range")->check(CLI::Range(0.0, 0.5));
    gen->add_option("--artifact-prob", artifact_prob, "Probability of streak artifacts per case")
        ->check(CLI::Range(0.0, 1.0));

    auto* train = app.add_subcommand("train", "Train a teacher/student pair");
    train->add_option("--config", config, "Train config JSON")->required()->check(CLI::ExistingFile);
    train->add_option("--data", data, "Dataset manifest.json")->required()->check(CLI::ExistingFile);
    train->add_option("--out", out, "Output directory")->required();

    auto* eval = app.add_subcommand("eval", "Score a checkpoint on one split and write a CSV");
    eval->add_option("--checkpoint", checkpoint, "VCK1 checkpoint")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", data, "Dataset manifest.json")->required()->check(CLI::ExistingFile);
    eval->add_option("--split", split, "labeled, validation or test")
        ->check(CLI::IsMember({"labeled", "validation", "test"}));
    eval->add_option("--out", out, "Output CSV")->required();

    auto* ablate = app.add_subcommand("ablate", "Run the baseline and the four loss-combination rows");
    ablate->add_option("--config", config, "Base train config JSON")->required()->check(CLI::ExistingFile);
    ablate->add_option("--data", data, "Dataset manifest.json")->required()->check(CLI::ExistingFile);
    ablate->add_option("--seeds", seeds, "Comma-separated seeds")->required()->delimiter(',');
    ablate->add_option("--out", out, "Output directory")->required();

    auto* pseudo = app.add_subcommand("pseudolabel", "Dump uncertainty and pseudo-label maps for one case");
    pseudo->add_option("--checkpoint", checkpoint, "VCK1 checkpoint")->required()->check(CLI::ExistingFile);
    pseudo->add_option("--data", data, "Dataset manifest.json")->required()->check(CLI::ExistingFile);
    pseudo->add_option("--case", case_id, "Case id")->required();
    pseudo->add_option("--out", out, "Output directory")->required();
    pseudo->add_option("--config", config, "Train config JSON for M, k, l, band and kernel")
        ->check(CLI::ExistingFile);
    pseudo->add_option("--reference", reference, "Labeled case supplying the embeddings");

    if (argc <= 1) {
        std::cerr << app.help();
        return kUsageError;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        const auto subs = app.get_subcommands();
        std::cerr << (subs.empty() ? app.help() : subs.front()->help());
        return kUsageError;
    }

    if (int rc = apply_thread_env()) return rc;

    if (*gen) {
        return report(vs_gen_data(out.c_str(), n_train, n_labeled, n_val, n_test, seed, delta_max, artifact_prob));
    }
    DatasetHandle ds;
    if (int rc = load(data, ds)) return rc;
    if (*train) return report(vs_train(config.c_str(), ds.ptr, out.c_str(), print_line, nullptr));
    if (*eval) {
        return report(vs_eval(checkpoint.c_str(), ds.ptr, split.c_str(), out.c_str(), print_stdout, nullptr, nullptr,
                              nullptr));
    }
    if (*ablate) {
        const int rc =
            report(vs_ablate(config.c_str(), ds.ptr, seeds.data(), seeds.size(), out.c_str(), print_line, nullptr));
        if (rc == 0) std::printf("wrote %s/ablation.csv\n", out.c_str());
        return rc;
    }
    if (*pseudo) {
        return report(vs_pseudolabel(checkpoint.c_str(), ds.ptr, case_id, config.empty() ? nullptr : config.c_str(),
                                     reference, out.c_str()));
    }
    return kUsageError;
}
