#ifndef MOT3D_H
#define MOT3D_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call.
 */
typedef enum Mot3dStatus {
  MOT3D_STATUS_OK = 0,
  MOT3D_STATUS_NULL_POINTER = 1,
  MOT3D_STATUS_INVALID_INPUT = 2,
  MOT3D_STATUS_CONFIG = 3,
  MOT3D_STATUS_FORMAT = 4,
  MOT3D_STATUS_EMPTY_DATASET = 5,
  MOT3D_STATUS_IO = 6,
  MOT3D_STATUS_POSE_FAILURE = 7,
  MOT3D_STATUS_DEGENERATE_GEOMETRY = 8,
  MOT3D_STATUS_UNDEFINED_METRIC = 9,
  MOT3D_STATUS_INTERNAL = 10,
} Mot3dStatus;

/**
 * Opaque run configuration.
 */
typedef struct Mot3dConfig Mot3dConfig;

/**
 * Opaque trained association network.
 */
typedef struct Mot3dTracker Mot3dTracker;

/**
 * A 7-DoF similarity pose: `x -> scale * rotation * x + translation`, with
 * `rotation` row-major.
 */
typedef struct Mot3dPose {
  double scale;
  double rotation[9];
  double translation[3];
} Mot3dPose;

/**
 * Accumulated scores over a dataset.
 */
typedef struct Mot3dSummary {
  size_t misses;
  size_t false_positives;
  size_t mismatches;
  size_t matches;
  size_t gt_count;
  /**
   * NaN when there is no ground truth.
   */
  double mota;
  double precision;
  double recall;
  double f1;
} Mot3dSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *mot3d_last_error(void);

/**
 * Default configuration. Never fails; release with [`mot3d_config_free`].
 */
struct Mot3dConfig *mot3d_config_new(void);

/**
 * Parses and validates a TOML configuration.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a writable pointer.
 */
enum Mot3dStatus mot3d_config_from_toml(const char *toml, struct Mot3dConfig **out);

/**
 * # Safety
 * `cfg` must be null or come from this library, and not be used afterwards.
 */
void mot3d_config_free(struct Mot3dConfig *cfg);

/**
 * # Safety
 * `cfg` must be a live configuration handle.
 */
enum Mot3dStatus mot3d_config_set_seed(struct Mot3dConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must be a live configuration handle.
 */
enum Mot3dStatus mot3d_config_set_sequences(struct Mot3dConfig *cfg, size_t sequences);

/**
 * Least-squares similarity mapping `noc` points onto `obs` points; both
 * arrays hold `n` packed xyz triples.
 *
 * # Safety
 * `noc` and `obs` must point to `3 * n` doubles, `out` must be writable.
 */
enum Mot3dStatus mot3d_umeyama_fit(const double *noc,
                                   const double *obs,
                                   size_t n,
                                   struct Mot3dPose *out);

/**
 * `1 - (misses + false_positives + mismatches) / gt_count`.
 *
 * # Safety
 * `out` must be writable.
 */
enum Mot3dStatus mot3d_mota(size_t misses,
                            size_t false_positives,
                            size_t mismatches,
                            size_t gt_count,
                            double *out);

/**
 * Simulates `cfg`'s sequences into `dir`.
 *
 * # Safety
 * `cfg` must be a live handle and `dir` a NUL-terminated path.
 */
enum Mot3dStatus mot3d_generate(const struct Mot3dConfig *cfg, const char *dir);

/**
 * Loads a trained network from a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated path and `out` writable.
 */
enum Mot3dStatus mot3d_tracker_load(const char *path, struct Mot3dTracker **out);

/**
 * # Safety
 * `t` must be null or come from this library, and not be used afterwards.
 */
void mot3d_tracker_free(struct Mot3dTracker *t);

/**
 * Tracks every sequence of `data_dir` into `out_dir`. A null `tracker`
 * selects the nearest-center heuristic.
 *
 * # Safety
 * Handles must be live or null as documented; paths NUL-terminated.
 */
enum Mot3dStatus mot3d_track(const struct Mot3dConfig *cfg,
                             const struct Mot3dTracker *tracker,
                             const char *data_dir,
                             const char *out_dir);

/**
 * Scores the tracklets in `tracklet_dir` against `data_dir`.
 *
 * # Safety
 * `cfg` must be a live handle, paths NUL-terminated, `out` writable.
 */
enum Mot3dStatus mot3d_evaluate(const struct Mot3dConfig *cfg,
                                const char *data_dir,
                                const char *tracklet_dir,
                                struct Mot3dSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOT3D_H */
