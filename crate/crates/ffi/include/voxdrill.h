#ifndef VOXDRILL_H
#define VOXDRILL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Values 2..=10 match the CLI exit codes.
 */
typedef enum VdStatus {
  VD_STATUS_OK = 0,
  VD_STATUS_INVALID_ARGUMENT = 2,
  VD_STATUS_IO = 3,
  VD_STATUS_PARSE = 4,
  VD_STATUS_UNSUPPORTED = 5,
  VD_STATUS_VALIDATION = 6,
  VD_STATUS_INSUFFICIENT_DATA = 7,
  VD_STATUS_VERIFICATION = 8,
  VD_STATUS_CORRUPT = 9,
  VD_STATUS_NETWORK = 10,
  VD_STATUS_NULL_POINTER = 11,
  VD_STATUS_BUFFER_TOO_SMALL = 12,
  VD_STATUS_PANIC = 13,
} VdStatus;

typedef struct VdRecording VdRecording;

typedef struct VdSession VdSession;

typedef struct VdVolume VdVolume;

/**
 * Drill command for one tick. `orientation` is `[w, x, y, z]`.
 */
typedef struct VdDrillInput {
  double position[3];
  double orientation[4];
  double pedal;
  uint32_t burr_id;
} VdDrillInput;

typedef struct VdStepResult {
  uint64_t tick;
  double t;
  uint32_t removed;
  uint32_t contacts;
  uint32_t warnings;
  double force[3];
  double pitch;
} VdStepResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *vd_version(void);

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *vd_last_error(void);

/**
 * Loads a NRRD/seg.nrrd file or slice-stack directory.
 *
 * # Safety
 * `path` must be a valid C string; `out_volume` must be writable.
 */
enum VdStatus vd_volume_load(const char *path, struct VdVolume **out_volume);

/**
 * Builds a volume from `dims[0]*dims[1]*dims[2]` labels (x fastest). Every
 * non-zero label gets a segment named `Segment <label>`.
 *
 * # Safety
 * `dims` and `spacing` must point to 3 values, `labels` to `count` values.
 */
enum VdStatus vd_volume_from_labels(const size_t *dims,
                                    const double *spacing,
                                    const uint16_t *labels,
                                    size_t count,
                                    struct VdVolume **out_volume);

/**
 * # Safety
 * `volume` must come from this library and not be freed twice. NULL is ignored.
 */
void vd_volume_free(struct VdVolume *volume);

/**
 * # Safety
 * `volume` must be a live handle; `out_dims` must have room for 3 values.
 */
enum VdStatus vd_volume_dims(const struct VdVolume *volume, size_t *out_dims);

/**
 * XXH64 content digest of the grid.
 *
 * # Safety
 * `volume` must be a live handle; `out_digest` must be writable.
 */
enum VdStatus vd_volume_digest(const struct VdVolume *volume, uint64_t *out_digest);

/**
 * # Safety
 * `volume` must be a live handle; `out_count` must be writable.
 */
enum VdStatus vd_volume_occupied(const struct VdVolume *volume, uint64_t *out_count);

/**
 * # Safety
 * `volume` must be a live handle; `out_label` must be writable.
 */
enum VdStatus vd_volume_label_at(const struct VdVolume *volume,
                                 uint32_t i,
                                 uint32_t j,
                                 uint32_t k,
                                 uint16_t *out_label);

/**
 * Writes the volume as gzip-encoded 16-bit seg.nrrd.
 *
 * # Safety
 * `volume` must be a live handle; `path` a valid C string.
 */
enum VdStatus vd_volume_save_nrrd(const struct VdVolume *volume, const char *path);

/**
 * Starts a session on a copy of `volume`. `config_toml` may be NULL for
 * defaults.
 *
 * # Safety
 * `volume` must be a live handle, `config_toml` NULL or a valid C string,
 * `out_session` writable.
 */
enum VdStatus vd_session_new(const struct VdVolume *volume,
                             const char *config_toml,
                             struct VdSession **out_session);

/**
 * Frees the session. An unfinished recording is finished first; its
 * errors are dropped.
 *
 * # Safety
 * `session` must come from this library and not be freed twice. NULL is ignored.
 */
void vd_session_free(struct VdSession *session);

/**
 * Advances one tick.
 *
 * # Safety
 * `session` must be a live handle; `input` readable; `out_result` NULL or writable.
 */
enum VdStatus vd_session_step(struct VdSession *session,
                              const struct VdDrillInput *input,
                              struct VdStepResult *out_result);

/**
 * Plays a trajectory file (TOML or JSON keyframes) from the current time.
 *
 * # Safety
 * `session` must be a live handle; `path` a valid C string; `out_steps` NULL or writable.
 */
enum VdStatus vd_session_run_script(struct VdSession *session,
                                    const char *path,
                                    uint64_t *out_steps);

/**
 * # Safety
 * `session` must be a live handle; `out_digest` writable.
 */
enum VdStatus vd_session_digest(const struct VdSession *session, uint64_t *out_digest);

/**
 * Simulated seconds elapsed.
 *
 * # Safety
 * `session` must be a live handle; `out_t` writable.
 */
enum VdStatus vd_session_time(const struct VdSession *session, double *out_t);

/**
 * Copies the current grid into a new volume handle.
 *
 * # Safety
 * `session` must be a live handle; `out_volume` writable.
 */
enum VdStatus vd_session_volume(const struct VdSession *session, struct VdVolume **out_volume);

/**
 * Records every following event into `dir`. `participant` and
 * `wall_clock` (RFC 3339) may be NULL. Must be called before the first step.
 *
 * # Safety
 * `session` must be a live handle; string arguments NULL or valid C strings.
 */
enum VdStatus vd_session_start_recording(struct VdSession *session,
                                         const char *dir,
                                         const char *participant,
                                         const char *wall_clock);

/**
 * Seals the recording. The session is closed afterwards and refuses
 * further steps.
 *
 * # Safety
 * `session` must be a live handle; `out_events` NULL or writable.
 */
enum VdStatus vd_session_finish_recording(struct VdSession *session, uint64_t *out_events);

/**
 * Opens a recording directory after checking batch checksums.
 *
 * # Safety
 * `dir` must be a valid C string; `out_recording` writable.
 */
enum VdStatus vd_recording_open(const char *dir, struct VdRecording **out_recording);

/**
 * # Safety
 * `recording` must come from this library and not be freed twice. NULL is ignored.
 */
void vd_recording_free(struct VdRecording *recording);

/**
 * # Safety
 * `recording` must be a live handle; `out_count` writable.
 */
enum VdStatus vd_recording_event_count(const struct VdRecording *recording, uint64_t *out_count);

/**
 * Grid digest stored when the recording was sealed.
 *
 * # Safety
 * `recording` must be a live handle; `out_digest` writable.
 */
enum VdStatus vd_recording_final_digest(const struct VdRecording *recording, uint64_t *out_digest);

/**
 * Replays the removals onto `initial` (NULL = the anatomy copy stored in
 * the recording) and returns the resulting grid.
 *
 * # Safety
 * `recording` must be a live handle; `initial` NULL or live; `out_volume` writable.
 */
enum VdStatus vd_recording_replay(const struct VdRecording *recording,
                                  const struct VdVolume *initial,
                                  struct VdVolume **out_volume);

/**
 * Writes the metrics report as NUL-terminated JSON into `buf`. The required
 * size including the NUL goes to `out_needed` (if not NULL); a short or
 * NULL buffer yields `BUFFER_TOO_SMALL` so callers can size and retry.
 *
 * # Safety
 * `recording` must be a live handle; `buf` NULL or writable for `capacity` bytes.
 */
enum VdStatus vd_recording_metrics_json(const struct VdRecording *recording,
                                        char *buf,
                                        size_t capacity,
                                        size_t *out_needed);

/**
 * Audio pitch for a collision force.
 *
 * # Safety
 * `force` must point to 3 values; `out_pitch` writable.
 */
enum VdStatus vd_audio_pitch(const double *force, double p_max, double f_max, double *out_pitch);

/**
 * Haptic output force: collision force plus drill vibration while running.
 *
 * # Safety
 * `f_collision` must point to 3 values; `out_force` must have room for 3.
 */
enum VdStatus vd_haptic_force(const double *f_collision,
                              bool drill_on,
                              double t,
                              double a_drill,
                              double frequency,
                              double *out_force);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOXDRILL_H */
