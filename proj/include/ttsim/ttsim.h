/* C interface to the table-tennis agent stack: opaque context, error codes,
 * coarse pipeline operations. The CLI links against this surface only. */
#ifndef TTSIM_TTSIM_H_
#define TTSIM_TTSIM_H_

#include <stdint.h>

#if defined(_WIN32)
#define TTSIM_API __declspec(dllexport)
#else
#define TTSIM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef struct ttsim_ctx ttsim_ctx;

typedef enum ttsim_status {
  TTSIM_OK = 0,
  TTSIM_USAGE_ERROR = 1, /* bad arguments or config */
  TTSIM_DATA_ERROR = 2,  /* malformed or missing inputs */
  TTSIM_ABORT = 3        /* divergence or internal failure */
} ttsim_status;

TTSIM_API const char* ttsim_version(void);

/* config_path may be NULL for built-in defaults. */
TTSIM_API ttsim_ctx* ttsim_ctx_new(const char* config_path);
TTSIM_API void ttsim_ctx_free(ttsim_ctx* ctx);

/* Message for the last failing call on this context. */
TTSIM_API const char* ttsim_last_error(const ttsim_ctx* ctx);

/* Dotted-path config override, e.g. "env.contact.table_friction=0.25". */
TTSIM_API ttsim_status ttsim_set(ttsim_ctx* ctx, const char* key_equals_value);
TTSIM_API ttsim_status ttsim_config_write(ttsim_ctx* ctx, const char* path);
TTSIM_API const char* ttsim_config_hash(ttsim_ctx* ctx);

/* Single-ball trajectory export: timestamped CSV rows (t, position,
 * velocity, spin, event). */
TTSIM_API ttsim_status ttsim_sim_shoot(ttsim_ctx* ctx, const double state9[9], double horizon,
                                       const char* out_csv);

/* Synthetic corpus of legal incoming balls (rally + serve), annotated. */
TTSIM_API ttsim_status ttsim_dataset_synth(ttsim_ctx* ctx, const char* out_path, int rally_count,
                                           int serve_count, uint64_t seed);

/* Raw (t,x,y,z) rows -> segmentation -> per-segment initial-state fits.
 * residuals_csv may be NULL. */
TTSIM_API ttsim_status ttsim_dataset_import(ttsim_ctx* ctx, const char* raw_path,
                                            const char* out_path, int cycle, uint64_t seed,
                                            const char* residuals_csv);

TTSIM_API ttsim_status ttsim_dataset_reflect(ttsim_ctx* ctx, const char* in_path,
                                             const char* out_path);
TTSIM_API ttsim_status ttsim_dataset_stats(ttsim_ctx* ctx, const char* in_path,
                                           const char* out_csv);

/* what: "skill" | "style" | "spin" | "film". base_model is required for
 * "film" (the stage it adapts); curve_csv may be NULL; preset selects a
 * named ES preset from the config ("simulation", "adapter", "desk"; NULL
 * uses the desk default). */
TTSIM_API ttsim_status ttsim_train(ttsim_ctx* ctx, const char* what, const char* dataset_path,
                                   const char* out_model, const char* curve_csv, uint64_t seed,
                                   int iterations, const char* style, const char* base_model,
                                   const char* preset);

TTSIM_API ttsim_status ttsim_descriptors_build(ttsim_ctx* ctx, const char* dataset_path,
                                               const char* out_dir, uint64_t seed,
                                               int repetitions);
TTSIM_API ttsim_status ttsim_descriptors_report(ttsim_ctx* ctx, const char* dir,
                                                const char* out_csv);

/* opponent: tier name, "exploiter" or "never_returns"; variant: "main" |
 * "alternating". store_path persists preferences across matches when given;
 * spin/style model paths are optional. random_skill != 0 bypasses the HLC. */
TTSIM_API ttsim_status ttsim_play_match(ttsim_ctx* ctx, const char* descriptors_dir,
                                        const char* opponent, const char* variant, uint64_t seed,
                                        const char* report_prefix, const char* event_log_csv,
                                        const char* store_path, const char* style_model,
                                        const char* spin_model, int random_skill);

TTSIM_API ttsim_status ttsim_play_tournament(ttsim_ctx* ctx, const char* descriptors_dir,
                                             int matches_per_tier, const char* variant,
                                             uint64_t seed, const char* out_csv,
                                             const char* style_model, const char* spin_model);

TTSIM_API ttsim_status ttsim_play_ablate(ttsim_ctx* ctx, const char* descriptors_dir,
                                         const char* dataset_path, uint64_t seed,
                                         const char* out_csv, const char* style_model);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* TTSIM_TTSIM_H_ */
