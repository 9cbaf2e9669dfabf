#ifndef VOXSEED_H
#define VOXSEED_H

/* C interface to the voxseed semi-supervised 3D segmentation library.
 *
 * Every function returns a vs_status. On failure a description is available
 * from vs_last_error() until the next call on the same thread. Strings are
 * UTF-8 paths or JSON text; returned strings are owned by the library. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define VS_API __declspec(dllexport)
#else
#define VS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vs_status {
    VS_OK = 0,
    VS_ERR_INVALID_ARGUMENT = 1,
    VS_ERR_SHAPE = 2,
    VS_ERR_INDEX = 3,
    VS_ERR_NO_SURFACE = 4,
    VS_ERR_EMPTY_MASK = 5,
    VS_ERR_TRAINING_DIVERGENCE = 6,
    VS_ERR_FORMAT = 7,
    VS_ERR_IO = 8,
    VS_ERR_INVALID_SPEC = 9,
    VS_ERR_INTERNAL = 99
} vs_status;

typedef struct vs_dataset vs_dataset;
typedef struct vs_checkpoint vs_checkpoint;

/* Receives progress lines (JSON text) during long-running calls. */
typedef void (*vs_line_callback)(const char* line, void* user);

VS_API const char* vs_version(void);
VS_API const char* vs_last_error(void);
VS_API const char* vs_status_name(vs_status status);

/* Worker threads for dense linear algebra; 0 = hardware default. */
VS_API vs_status vs_set_threads(int threads);

/* Train config JSON with every field at its default. Copies at most
 * `capacity` bytes including the terminator; `*needed` gets the full size. */
VS_API vs_status vs_default_config(char* buffer, size_t capacity, size_t* needed);

/* Synthetic phantom dataset. Negative delta_max / artifact_prob keep the
 * generator defaults. */
VS_API vs_status vs_gen_data(const char* out_dir, int n_train, int n_labeled, int n_val, int n_test, uint64_t seed,
                             double delta_max, double artifact_prob);

VS_API vs_status vs_dataset_load(const char* manifest_path, vs_dataset** out);
VS_API void vs_dataset_free(vs_dataset* dataset);
VS_API vs_status vs_dataset_counts(const vs_dataset* dataset, int* labeled, int* unlabeled, int* validation,
                                   int* test);

VS_API vs_status vs_checkpoint_load(const char* path, vs_checkpoint** out);
VS_API void vs_checkpoint_free(vs_checkpoint* checkpoint);
VS_API vs_status vs_checkpoint_info(const vs_checkpoint* checkpoint, int64_t* iteration, int64_t* total_iterations,
                                    size_t* parameter_count);

/* Writes log.jsonl, best.vck1 and final.vck1 into out_dir. */
VS_API vs_status vs_train(const char* config_path, const vs_dataset* dataset, const char* out_dir,
                          vs_line_callback progress, void* user);

/* Scores a checkpoint's teacher on a split and writes a CSV. `lines` gets one
 * JSON line per case plus an aggregate line. Means are optional outputs. */
VS_API vs_status vs_eval(const char* checkpoint_path, const vs_dataset* dataset, const char* split,
                         const char* out_csv, vs_line_callback lines, void* user, double* mean_iou,
                         double* mean_hd95);

VS_API vs_status vs_ablate(const char* config_path, const vs_dataset* dataset, const uint64_t* seeds,
                           size_t n_seeds, const char* out_dir, vs_line_callback progress, void* user);

/* config_path may be NULL for defaults; reference_id < 0 picks the first
 * labeled case. */
VS_API vs_status vs_pseudolabel(const char* checkpoint_path, const vs_dataset* dataset, int case_id,
                                const char* config_path, int reference_id, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* VOXSEED_H */
