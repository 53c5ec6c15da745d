/* Copyright Contributors to the urbansplat project
 * SPDX-License-Identifier: Apache-2.0 */

/* C interface to the urbansplat library.
 *
 * Objects are opaque handles created by the library and released with the
 * matching *_free call. Every fallible call returns a usp_status; on failure
 * usp_last_error() describes the problem. The message is thread-local and
 * stays valid until the next library call on the same thread.
 *
 * Strings returned through char** are heap allocated; release them with
 * usp_string_free. Paths are UTF-8. */

#ifndef URBANSPLAT_H
#define URBANSPLAT_H

#include <stdint.h>

#if defined(_WIN32)
#define USP_API __declspec(dllexport)
#else
#define USP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum usp_status {
    USP_OK = 0,
    USP_ERR_RUNTIME = 1,    /* computation failed (e.g. non-finite loss, I/O) */
    USP_ERR_VALIDATION = 2  /* malformed input, unknown id, violated invariant */
} usp_status;

typedef enum usp_split {
    USP_SPLIT_TRAIN = 0,
    USP_SPLIT_TEST = 1,
    USP_SPLIT_ALL = 2
} usp_split;

typedef struct usp_dataset usp_dataset;
typedef struct usp_scene usp_scene;

/* Called once per training iteration with one JSON object (no newline). */
typedef void (*usp_log_fn)(const char* json_line, void* user);

USP_API const char* usp_version(void);
USP_API const char* usp_last_error(void);
USP_API void usp_string_free(char* s);

/* Worker threads used when a call does not say otherwise; 0 = hardware. */
USP_API usp_status usp_set_threads(int threads);

/* ---- datasets ---------------------------------------------------------- */

USP_API usp_status usp_dataset_load(const char* root, usp_dataset** out);
USP_API void usp_dataset_free(usp_dataset* dataset);
USP_API usp_status usp_dataset_frame_count(const usp_dataset* dataset, int* out);

/* Generates a synthetic scene from a JSON spec and writes the dataset to
 * dataset_dir. Tracked poses get zero-mean Gaussian noise (meters, radians)
 * drawn with noise_seed; the clean tracks are kept in the dataset for
 * scoring. When truth_checkpoint_dir is non-null the ground-truth scene is
 * saved there. seed_override replaces the spec seed when non-negative. */
USP_API usp_status usp_synth_generate(const char* spec_json, int64_t seed_override, double sigma_translation,
                                      double sigma_yaw, uint64_t noise_seed, const char* dataset_dir,
                                      const char* truth_checkpoint_dir);

/* ---- scenes ------------------------------------------------------------ */

/* Initial scene from LiDAR. init_json may be null for defaults. */
USP_API usp_status usp_scene_init(const usp_dataset* dataset, const char* init_json, usp_scene** out);
USP_API usp_status usp_scene_load(const char* checkpoint_dir, usp_scene** out);
USP_API usp_status usp_scene_save(const usp_scene* scene, const char* checkpoint_dir);
USP_API void usp_scene_free(usp_scene* scene);

USP_API usp_status usp_scene_frame_count(const usp_scene* scene, int* out);
USP_API usp_status usp_scene_view_count(const usp_scene* scene, int* out);
/* Timestep recorded with view `index`. */
USP_API usp_status usp_scene_view_timestep(const usp_scene* scene, int index, int* out);
USP_API usp_status usp_scene_object_count(const usp_scene* scene, int* out);
USP_API usp_status usp_scene_object_id(const usp_scene* scene, int index, int* out);

/* Applies a JSON edit script to a copy of the scene. */
USP_API usp_status usp_scene_edit(const usp_scene* scene, const char* script_json, usp_scene** out);

/* ---- training ---------------------------------------------------------- */

/* Optimizes *scene in place against the dataset. config_json follows the
 * train config format. out_dir (nullable) receives diagnostics and periodic
 * checkpoints. on_log (nullable) sees every iteration record. */
USP_API usp_status usp_train(const usp_dataset* dataset, usp_scene* scene, const char* config_json,
                             const char* out_dir, usp_log_fn on_log, void* user);

/* ---- rendering --------------------------------------------------------- */

/* Renders recorded view `camera` at `timestep` to an 8-bit PNG.
 * threads = 0 uses the default set by usp_set_threads. */
USP_API usp_status usp_render_png(const usp_scene* scene, int camera, int timestep, int threads,
                                  const char* png_path);

/* Renders one component over the sky: the background when object_id is
 * null, otherwise only that object. */
USP_API usp_status usp_render_component_png(const usp_scene* scene, const int* object_id, int camera,
                                            int timestep, int threads, const char* png_path);

/* ---- evaluation -------------------------------------------------------- */

/* Scores the frames of `split` (held out: index % test_every == test_every-1;
 * test_every = 0 means every frame is both train and test). Writes rendered
 * frames as NNNN.png into image_dir when non-null. *report_json receives
 * the JSON report. */
USP_API usp_status usp_evaluate(const usp_scene* scene, const usp_dataset* dataset, int test_every,
                                usp_split split, int threads, const char* image_dir, char** report_json);

#ifdef __cplusplus
}
#endif

#endif /* URBANSPLAT_H */
