#ifndef FACEDYN_H
#define FACEDYN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define FD_N_COEFF 62

#define FD_N_LANDMARKS 68

typedef enum {
  FD_STATUS_OK = 0,
  FD_STATUS_NULL_POINTER = 1,
  FD_STATUS_INVALID_INPUT = 2,
  FD_STATUS_NUMERIC = 3,
  FD_STATUS_FORMAT = 4,
  FD_STATUS_PANIC = 5,
} FdStatus;

/**
 * Opaque morphable model.
 */
typedef struct FdModel FdModel;

/**
 * Opaque coefficient-sequence predictor.
 */
typedef struct FdPredictor FdPredictor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty if none. The
 * pointer stays valid until the next failing call on this thread.
 */
const char *fd_last_error(void);

/**
 * Loads a model container. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
FdStatus fd_model_load(const char *path, FdModel **out);

/**
 * # Safety
 * `m` must come from [`fd_model_load`] and not be freed twice. Null is a no-op.
 */
void fd_model_free(FdModel *m);

/**
 * Vertex count, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live model handle.
 */
size_t fd_model_vertex_count(const FdModel *m);

/**
 * Triangle count, or 0 for a null handle.
 *
 * # Safety
 * `m` must be null or a live model handle.
 */
size_t fd_model_triangle_count(const FdModel *m);

/**
 * Model-space vertices under `coeffs`, written as `x, y, z` per vertex
 * into `out_xyz` (3·N doubles).
 *
 * # Safety
 * Pointers must be valid for the documented lengths.
 */
FdStatus fd_model_evaluate(const FdModel *m, const double *coeffs, double *out_xyz);

/**
 * Image-plane positions (`x, y` per vertex, 2·N doubles) and depths (N
 * doubles). Either output may be null to skip it.
 *
 * # Safety
 * Non-null pointers must be valid for the documented lengths.
 */
FdStatus fd_model_project(const FdModel *m,
                          const double *coeffs,
                          double *out_xy,
                          double *out_depth);

/**
 * The 68 projected landmarks as `x, y` pairs (136 doubles).
 *
 * # Safety
 * Pointers must be valid for the documented lengths.
 */
FdStatus fd_model_landmarks(const FdModel *m, const double *coeffs, double *out_xy);

/**
 * Fits coefficients to 68 observed `x, y` landmarks. `out_objective` may
 * be null.
 *
 * # Safety
 * Non-null pointers must be valid for the documented lengths.
 */
FdStatus fd_fit_landmarks(const FdModel *m,
                          const double *observed_xy,
                          double reg,
                          size_t max_iter,
                          double *out_coeffs,
                          double *out_objective);

/**
 * Renders a sparse prior of `width × height` pixels: the source texture
 * mapped through the target geometry with every `interval`-th triangle.
 * Writes interleaved RGB into `out_rgb` (3·w·h bytes), 0/255 into
 * `out_mask` (w·h bytes, may be null) and the masked pixel count into
 * `out_masked` (may be null).
 *
 * # Safety
 * Non-null pointers must be valid for the documented lengths.
 */
FdStatus fd_render_prior(const FdModel *m,
                         const uint8_t *source_rgb,
                         uint32_t source_width,
                         uint32_t source_height,
                         const double *source_coeffs,
                         const double *target_coeffs,
                         size_t interval,
                         uint32_t width,
                         uint32_t height,
                         uint8_t *out_rgb,
                         uint8_t *out_mask,
                         size_t *out_masked);

/**
 * Triangles kept from `k_total` at interval `n`; 0 when `n` is 0.
 */
size_t fd_kept_count(size_t k_total, size_t n);

/**
 * Loads a predictor checkpoint. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
FdStatus fd_predictor_load(const char *path, FdPredictor **out);

/**
 * # Safety
 * `p` must come from [`fd_predictor_load`] and not be freed twice. Null is a no-op.
 */
void fd_predictor_free(FdPredictor *p);

/**
 * Hidden width, or 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live predictor handle.
 */
size_t fd_predictor_hidden(const FdPredictor *p);

/**
 * Free-running prediction of `t_len` frames after `d0` into `out`
 * (62·t_len doubles).
 *
 * # Safety
 * Pointers must be valid for the documented lengths.
 */
FdStatus fd_predict_sequence(const FdPredictor *p, const double *d0, size_t t_len, double *out);

/**
 * Prediction of `t_len` frames from `d0` towards `target` into `out`
 * (62·t_len doubles).
 *
 * # Safety
 * Pointers must be valid for the documented lengths.
 */
FdStatus fd_predict_target(const FdPredictor *p,
                           const double *d0,
                           const double *target,
                           size_t t_len,
                           double *out);

/**
 * Straight-line frames `1..=t_len` from `d0` to `target` into `out`
 * (62·t_len doubles); the last frame equals `target` exactly.
 *
 * # Safety
 * Pointers must be valid for the documented lengths.
 */
FdStatus fd_interpolate(const double *d0, const double *target, size_t t_len, double *out);

/**
 * PSNR in dB of two interleaved RGB images; `+inf` when identical.
 *
 * # Safety
 * Images must hold 3·w·h bytes; `out` must be valid.
 */
FdStatus fd_psnr(const uint8_t *a, const uint8_t *b, uint32_t width, uint32_t height, double *out);

/**
 * Mean SSIM of two interleaved RGB images (at least 11×11).
 *
 * # Safety
 * Images must hold 3·w·h bytes; `out` must be valid.
 */
FdStatus fd_ssim(const uint8_t *a, const uint8_t *b, uint32_t width, uint32_t height, double *out);

/**
 * Landmark RMS between `n` predicted and true `x, y` pairs, divided by the
 * truth's bounding-box diagonal when `normalize` is non-zero.
 *
 * # Safety
 * `pred` and `truth` must hold 2·n doubles; `out` must be valid.
 */
FdStatus fd_lrms(const double *pred, const double *truth, size_t n, int32_t normalize, double *out);

/**
 * Squared distance between the unit-normalised embeddings `e1` and `e2`
 * of length `n`.
 *
 * # Safety
 * `e1` and `e2` must hold `n` doubles; `out` must be valid.
 */
FdStatus fd_identity_loss(const double *e1, const double *e2, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FACEDYN_H */
