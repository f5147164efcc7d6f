#ifndef DISTGAN_H
#define DISTGAN_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DgStatus {
  DG_STATUS_OK = 0,
  DG_STATUS_NULL_POINTER = 1,
  DG_STATUS_INVALID_UTF8 = 2,
  DG_STATUS_INVALID_ARGUMENT = 3,
  DG_STATUS_CONFIG = 4,
  DG_STATUS_SHAPE = 5,
  DG_STATUS_NUMERIC = 6,
  DG_STATUS_IO = 7,
  DG_STATUS_PANIC = 8,
} DgStatus;

/**
 * Which network of a preset to build.
 */
typedef enum DgRole {
  DG_ROLE_GENERATOR = 0,
  DG_ROLE_DISCRIMINATOR = 1,
} DgRole;

/**
 * Opaque network handle.
 */
typedef struct DgNetwork DgNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *dg_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *dg_version(void);

/**
 * Builds a preset network (`"ring"` or `"mnist"`). For the generator,
 * `input_dim` is the noise size and `output_dim` the sample size; for the
 * discriminator `input_dim` is the sample size and `output_dim` is ignored.
 *
 * # Safety
 * `preset` must be a nul-terminated string and `out` a writable pointer.
 */
enum DgStatus dg_network_from_preset(const char *preset,
                                     enum DgRole role,
                                     size_t input_dim,
                                     size_t hidden,
                                     size_t output_dim,
                                     double slope,
                                     uint64_t seed,
                                     struct DgNetwork **out);

/**
 * Builds a network from a TOML architecture document.
 *
 * # Safety
 * `spec_toml` must be a nul-terminated string and `out` a writable pointer.
 */
enum DgStatus dg_network_from_spec_toml(const char *spec_toml,
                                        uint64_t seed,
                                        struct DgNetwork **out);

/**
 * # Safety
 * `net` must come from this library and not be used afterwards. Null is a no-op.
 */
void dg_network_free(struct DgNetwork *net);

/**
 * # Safety
 * `net` must be a live handle; the out pointers must be writable.
 */
enum DgStatus dg_network_dims(const struct DgNetwork *net,
                              size_t *input_dim,
                              size_t *output_dim,
                              size_t *param_count);

/**
 * Copies the flat parameter vector into `out` (`len` must equal the
 * parameter count).
 *
 * # Safety
 * `out` must point to `len` writable doubles.
 */
enum DgStatus dg_network_params(const struct DgNetwork *net, double *out, size_t len);

/**
 * Forward pass over `rows` row-major inputs of the network's input width.
 * `output` must hold `rows * output_dim` doubles.
 *
 * # Safety
 * Buffers must be valid for the stated lengths.
 */
enum DgStatus dg_network_forward(const struct DgNetwork *net,
                                 const double *input,
                                 size_t rows,
                                 size_t cols,
                                 double *output,
                                 size_t output_len);

/**
 * Mode coverage of `n` samples against `m` centers, both row-major with `dim` columns.
 *
 * # Safety
 * Buffers must be valid for the stated lengths; out pointers writable.
 */
enum DgStatus dg_mode_coverage(const double *samples,
                               size_t n,
                               const double *centers,
                               size_t m,
                               size_t dim,
                               double sigma,
                               size_t threshold_count,
                               size_t *covered_modes,
                               double *quality);

/**
 * Finite-difference gradient check over `trials` random networks. Returns
 * `DG_STATUS_NUMERIC` when the worst relative error reaches tolerance.
 *
 * # Safety
 * `max_relative_error` must be writable.
 */
enum DgStatus dg_gradcheck(uint64_t seed, size_t trials, double *max_relative_error);

/**
 * Runs an experiment from a TOML config document. `out_dir` may be null to
 * use the config's directory. `exit_code` receives the CLI-equivalent code.
 *
 * # Safety
 * Strings must be nul-terminated; `exit_code` writable.
 */
enum DgStatus dg_run_experiment(const char *config_toml, const char *out_dir, int32_t *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISTGAN_H */
