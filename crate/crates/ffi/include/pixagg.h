#ifndef PIXAGG_H
#define PIXAGG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum PxStatus {
  PX_STATUS_OK = 0,
  PX_STATUS_NULL_POINTER = 1,
  PX_STATUS_INVALID_SHAPE = 2,
  PX_STATUS_INVALID_GRID = 3,
  PX_STATUS_INVALID_INPUT = 4,
  PX_STATUS_INVALID_PARAMS = 5,
  PX_STATUS_INVALID_PARTITION = 6,
  PX_STATUS_NOT_FOUND = 7,
  PX_STATUS_BAD_MAGIC = 8,
  PX_STATUS_TRUNCATED = 9,
  PX_STATUS_PARSE = 10,
  PX_STATUS_CONFIG = 11,
  PX_STATUS_IO = 12,
  PX_STATUS_PANIC = 13,
} PxStatus;

// A rigid sampling grid.
typedef struct PxGrid PxGrid;

// A trained denoising model.
typedef struct PxModel PxModel;

// A seeded random stream.
typedef struct PxRng PxRng;

// A float32 tensor.
typedef struct PxTensor PxTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message, NUL-terminated and
// truncated to `cap` bytes. Returns the full message length in bytes.
//
// # Safety
// `buf` must be null or point to `cap` writable bytes.
size_t px_last_error(char *buf, size_t cap);

// New tensor of the given shape. `data` may be null for zeros; otherwise it
// must hold the product of the dimensions in row-major order.
//
// # Safety
// `shape` must point to `rank` values; `data`, when not null, to enough
// floats; `out` must be writable.
enum PxStatus px_tensor_new(const size_t *shape,
                            size_t rank,
                            const float *data,
                            struct PxTensor **out);

// # Safety
// `t` must be null or a handle from this library, not freed before.
void px_tensor_free(struct PxTensor *t);

// Rank of the tensor, 0 for a null handle.
//
// # Safety
// `t` must be null or a live handle.
size_t px_tensor_rank(const struct PxTensor *t);

// Element count, 0 for a null handle.
//
// # Safety
// `t` must be null or a live handle.
size_t px_tensor_len(const struct PxTensor *t);

// Writes up to `cap` dimensions into `dims`.
//
// # Safety
// `t` must be a live handle and `dims` point to `cap` writable values.
enum PxStatus px_tensor_shape(const struct PxTensor *t, size_t *dims, size_t cap);

// Read-only pointer to the row-major data, valid until the handle is freed.
//
// # Safety
// `t` must be null or a live handle.
const float *px_tensor_data(const struct PxTensor *t);

// Loads a `PXT1` file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum PxStatus px_tensor_read(const char *path, struct PxTensor **out);

// Writes a `PXT1` file.
//
// # Safety
// `t` must be a live handle and `path` a NUL-terminated string.
enum PxStatus px_tensor_write(const struct PxTensor *t, const char *path);

// # Safety
// Always safe; free the result with [`px_rng_free`].
struct PxRng *px_rng_new(uint64_t seed);

// # Safety
// `r` must be null or a live handle.
void px_rng_free(struct PxRng *r);

// Bilinear sample of an `h x w` tensor; zero outside.
//
// # Safety
// `x` must be a live handle and `out` writable.
enum PxStatus px_bilinear_sample(const struct PxTensor *x, double u, double v, float *out);

// Trilinear sample of an `h x w x f` tensor; zero outside.
//
// # Safety
// `x` must be a live handle and `out` writable.
enum PxStatus px_trilinear_sample(const struct PxTensor *x,
                                  double u,
                                  double v,
                                  double t,
                                  float *out);

// Rigid grid of `dim` (2 or 3) odd extents.
//
// # Safety
// `extents` must point to `dim` values and `out` be writable.
enum PxStatus px_grid_new(size_t dim, const size_t *extents, struct PxGrid **out);

// # Safety
// `g` must be null or a live handle.
void px_grid_free(struct PxGrid *g);

// Number of grid points, 0 for a null handle.
//
// # Safety
// `g` must be null or a live handle.
size_t px_grid_len(const struct PxGrid *g);

// Weighted sum of deformed-grid samples. `x` is `h x w` or `h x w x f`,
// `offsets` is `h x w x n x d`, `weights` is `h x w x n`; the result is
// `h x w`.
//
// # Safety
// All handles must be live and `out` writable.
enum PxStatus px_aggregate(const struct PxTensor *x,
                           const struct PxGrid *grid,
                           const struct PxTensor *offsets,
                           const struct PxTensor *weights,
                           struct PxTensor **out);

// sRGB gamma curve (input clamped to [0, 1]).
double px_gamma(double y);

// Inverse of [`px_gamma`].
double px_inverse_gamma(double z);

// Adds Gaussian noise of variance `sigma_s * x + sigma_r^2`.
//
// # Safety
// `x` and `rng` must be live handles and `out` writable.
enum PxStatus px_add_noise(const struct PxTensor *x,
                           double sigma_s,
                           double sigma_r,
                           struct PxRng *rng,
                           struct PxTensor **out);

// Coefficient `eta * gamma^m` of the annealed group loss.
double px_anneal_coeff(double eta, double gamma, uint64_t m);

// PSNR in dB (peak 1); identical inputs give +infinity.
//
// # Safety
// `a` and `b` must be live handles and `out` writable.
enum PxStatus px_psnr(const struct PxTensor *a, const struct PxTensor *b, double *out);

// Mean SSIM over 11x11 Gaussian windows.
//
// # Safety
// `a` and `b` must be live handles and `out` writable.
enum PxStatus px_ssim(const struct PxTensor *a, const struct PxTensor *b, double *out);

// Loads a `PXC1` checkpoint.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum PxStatus px_model_load(const char *path, struct PxModel **out);

// # Safety
// `m` must be null or a live handle.
void px_model_free(struct PxModel *m);

// Frames the model takes (`2 tau + 1`), 0 for a null handle.
//
// # Safety
// `m` must be null or a live handle.
size_t px_model_frames(const struct PxModel *m);

// Denoises the reference frame of `frames` (`f x h x w`, linear). Blind
// models ignore the noise parameters; non-blind models need both to be
// nonnegative.
//
// # Safety
// `m` and `frames` must be live handles and `out` writable.
enum PxStatus px_model_denoise(const struct PxModel *m,
                               const struct PxTensor *frames,
                               double sigma_s,
                               double sigma_r,
                               struct PxTensor **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIXAGG_H */
