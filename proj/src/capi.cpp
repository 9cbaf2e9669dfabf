#include "voxseed/voxseed.h"

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "checkpoint.hpp"
#include "pipeline.hpp"

struct vs_dataset {
    voxseed::DatasetSplit split;
};

struct vs_checkpoint {
    voxseed::Checkpoint ck;
};

namespace {

thread_local std::string last_error;

vs_status fail(vs_status status, const char* message) {
    last_error = message;
    return status;
}

template <class F>
vs_status guarded(F&& body) {
    last_error.clear();
    try {
        body();
        return VS_OK;
    } catch (const voxseed::Error& e) {
        return fail(static_cast<vs_status>(e.code()), e.what());
    } catch (const std::bad_alloc&) {
        return fail(VS_ERR_INTERNAL, "out of memory");
    } catch (const std::exception& e) {
        return fail(VS_ERR_INTERNAL, e.what());
    } catch (...) {
        return fail(VS_ERR_INTERNAL, "unknown error");
    }
}

void require(const void* p, const char* what) {
    if (!p) throw voxseed::InvalidArgument(std::string(what) + " must not be null");
}

voxseed::LineSink sink(vs_line_callback cb, void* user) {
    if (!cb) return {};
    return [cb, user](const std::string& line) { cb(line.c_str(), user); };
}

}  // namespace

extern "C" {

const char* vs_version(void) { return "1.0.0"; }

const char* vs_last_error(void) { return last_error.c_str(); }

const char* vs_status_name(vs_status status) {
    switch (status) {
        case VS_OK: return "ok";
        case VS_ERR_INVALID_ARGUMENT: return "invalid argument";
        case VS_ERR_SHAPE: return "shape mismatch";
        case VS_ERR_INDEX: return "index out of range";
        case VS_ERR_NO_SURFACE: return "no surface";
        case VS_ERR_EMPTY_MASK: return "empty mask";
        case VS_ERR_TRAINING_DIVERGENCE: return "training divergence";
        case VS_ERR_FORMAT: return "format error";
        case VS_ERR_IO: return "i/o error";
        case VS_ERR_INVALID_SPEC: return "invalid spec";
        case VS_ERR_INTERNAL: return "internal error";
    }
    return "unknown status";
}

vs_status vs_set_threads(int threads) {
    return guarded([&] {
        if (threads < 0) throw voxseed::InvalidArgument("thread count must be >= 0");
        voxseed::set_compute_threads(threads);
    });
}

vs_status vs_default_config(char* buffer, size_t capacity, size_t* needed) {
    return guarded([&] {
        const std::string text = nlohmann::json(voxseed::TrainConfig{}).dump(2);
        if (needed) *needed = text.size() + 1;
        if (buffer && capacity > 0) {
            const std::size_t n = std::min(capacity - 1, text.size());
            std::memcpy(buffer, text.data(), n);
            buffer[n] = '\0';
        }
    });
}

vs_status vs_gen_data(const char* out_dir, int n_train, int n_labeled, int n_val, int n_test, uint64_t seed,
                      double delta_max, double artifact_prob) {
    return guarded([&] {
        require(out_dir, "out_dir");
        voxseed::GenDataOptions o;
        o.out = out_dir;
        o.n_train = n_train;
        o.n_labeled = n_labeled;
        o.n_val = n_val;
        o.n_test = n_test;
        o.seed = seed;
        if (delta_max >= 0.0) {
            o.ranges.delta_max = delta_max;
            o.ranges.delta_min = std::min(o.ranges.delta_min, delta_max);
        }
        if (artifact_prob >= 0.0) o.ranges.artifact_prob = artifact_prob;
        voxseed::gen_data(o);
    });
}

vs_status vs_dataset_load(const char* manifest_path, vs_dataset** out) {
    return guarded([&] {
        require(manifest_path, "manifest_path");
        require(out, "out");
        *out = nullptr;
        auto ds = std::make_unique<vs_dataset>();
        ds->split = voxseed::load_manifest(manifest_path);
        *out = ds.release();
    });
}

void vs_dataset_free(vs_dataset* dataset) { delete dataset; }

vs_status vs_dataset_counts(const vs_dataset* dataset, int* labeled, int* unlabeled, int* validation, int* test) {
    return guarded([&] {
        require(dataset, "dataset");
        if (labeled) *labeled = static_cast<int>(dataset->split.labeled.size());
        if (unlabeled) *unlabeled = static_cast<int>(dataset->split.unlabeled.size());
        if (validation) *validation = static_cast<int>(dataset->split.validation.size());
        if (test) *test = static_cast<int>(dataset->split.test.size());
    });
}

vs_status vs_checkpoint_load(const char* path, vs_checkpoint** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = nullptr;
        auto ck = std::make_unique<vs_checkpoint>();
        ck->ck = voxseed::load_checkpoint(path);
        *out = ck.release();
    });
}

void vs_checkpoint_free(vs_checkpoint* checkpoint) { delete checkpoint; }

vs_status vs_checkpoint_info(const vs_checkpoint* checkpoint, int64_t* iteration, int64_t* total_iterations,
                             size_t* parameter_count) {
    return guarded([&] {
        require(checkpoint, "checkpoint");
        if (iteration) *iteration = checkpoint->ck.iteration;
        if (total_iterations) *total_iterations = checkpoint->ck.total_iterations;
        if (parameter_count) *parameter_count = checkpoint->ck.student.parameter_count();
    });
}

vs_status vs_train(const char* config_path, const vs_dataset* dataset, const char* out_dir,
                   vs_line_callback progress, void* user) {
    return guarded([&] {
        require(config_path, "config_path");
        require(dataset, "dataset");
        require(out_dir, "out_dir");
        const auto cfg = voxseed::load_train_config(config_path);
        voxseed::run_train(cfg, dataset->split, out_dir, sink(progress, user));
    });
}

vs_status vs_eval(const char* checkpoint_path, const vs_dataset* dataset, const char* split, const char* out_csv,
                  vs_line_callback lines, void* user, double* mean_iou, double* mean_hd95) {
    return guarded([&] {
        require(checkpoint_path, "checkpoint_path");
        require(dataset, "dataset");
        require(split, "split");
        require(out_csv, "out_csv");
        const auto scores = voxseed::run_eval(checkpoint_path, dataset->split, split, out_csv, sink(lines, user));
        double iou = 0.0, hd = 0.0;
        for (const auto& s : scores) {
            iou += s.iou;
            hd += s.hd95;
        }
        if (mean_iou) *mean_iou = iou / scores.size();
        if (mean_hd95) *mean_hd95 = hd / scores.size();
    });
}

vs_status vs_ablate(const char* config_path, const vs_dataset* dataset, const uint64_t* seeds, size_t n_seeds,
                    const char* out_dir, vs_line_callback progress, void* user) {
    return guarded([&] {
        require(config_path, "config_path");
        require(dataset, "dataset");
        require(out_dir, "out_dir");
        if (n_seeds > 0) require(seeds, "seeds");
        const auto cfg = voxseed::load_train_config(config_path);
        voxseed::run_ablate(cfg, dataset->split, std::vector<std::uint64_t>(seeds, seeds + n_seeds), out_dir,
                            sink(progress, user));
    });
}

vs_status vs_pseudolabel(const char* checkpoint_path, const vs_dataset* dataset, int case_id,
                         const char* config_path, int reference_id, const char* out_dir) {
    return guarded([&] {
        require(checkpoint_path, "checkpoint_path");
        require(dataset, "dataset");
        require(out_dir, "out_dir");
        voxseed::PseudolabelOptions o;
        if (config_path) o.config = voxseed::load_train_config(config_path);
        if (reference_id >= 0) o.reference_id = reference_id;
        voxseed::run_pseudolabel(checkpoint_path, dataset->split, case_id, out_dir, o);
    });
}

}  // extern "C"
