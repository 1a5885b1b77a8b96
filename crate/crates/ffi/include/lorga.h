#ifndef LORGA_H
#define LORGA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every function.
 */
typedef enum LorgaStatus {
  LORGA_STATUS_OK = 0,
  LORGA_STATUS_NULL_POINTER = 1,
  LORGA_STATUS_INVALID_ARGUMENT = 2,
  LORGA_STATUS_SHAPE_MISMATCH = 3,
  LORGA_STATUS_NON_FINITE = 4,
  LORGA_STATUS_CONVERGENCE = 5,
  LORGA_STATUS_IO = 6,
  LORGA_STATUS_INTERNAL = 7,
} LorgaStatus;

/**
 * Opaque dense matrix.
 */
typedef struct LorgaMatrix LorgaMatrix;

/**
 * Opaque feed-forward network, possibly carrying low-rank adapters.
 */
typedef struct LorgaNetwork LorgaNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *lorga_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a pointer obtained from this library that has not been freed.
 */
void lorga_string_free(char *s);

/**
 * Creates a `rows × cols` matrix from `rows * cols` row-major values.
 * `data` may be null only when the matrix is empty.
 *
 * # Safety
 * `data` must point to `rows * cols` readable doubles, `out` must be writable.
 */
enum LorgaStatus lorga_matrix_new(size_t rows,
                                  size_t cols,
                                  const double *data,
                                  struct LorgaMatrix **out);

/**
 * Releases a matrix. Null is ignored.
 *
 * # Safety
 * `m` must be null or a handle from this library that has not been freed.
 */
void lorga_matrix_free(struct LorgaMatrix *m);

/**
 * Writes the number of rows and columns.
 *
 * # Safety
 * `m` must be a live handle; `rows` and `cols` must be writable.
 */
enum LorgaStatus lorga_matrix_shape(const struct LorgaMatrix *m, size_t *rows, size_t *cols);

/**
 * Copies the row-major entries into `out`, which must hold exactly
 * `rows * cols` doubles (`len` is checked).
 *
 * # Safety
 * `m` must be a live handle; `out` must point to `len` writable doubles.
 */
enum LorgaStatus lorga_matrix_copy_data(const struct LorgaMatrix *m, double *out, size_t len);

/**
 * Reads a matrix from a binary `LGA1` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LorgaStatus lorga_matrix_read_lga1(const char *path, struct LorgaMatrix **out);

/**
 * Writes a matrix to a binary `LGA1` file.
 *
 * # Safety
 * `m` must be a live handle; `path` must be a NUL-terminated string.
 */
enum LorgaStatus lorga_matrix_write_lga1(const struct LorgaMatrix *m, const char *path);

/**
 * Singular values in descending order. `out` must hold `min(rows, cols)`
 * doubles; that count is written to `written`.
 *
 * # Safety
 * `m` must be a live handle; `out` must point to `len` writable doubles and
 * `written` must be writable.
 */
enum LorgaStatus lorga_matrix_singular_values(const struct LorgaMatrix *m,
                                              double *out,
                                              size_t len,
                                              size_t *written);

/**
 * Builds a network from a JSON spec such as
 * `{"layer_dims":[8,16,4],"activation":"tanh","loss":"mse","init_seed":0}`.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string; `out` must be writable.
 */
enum LorgaStatus lorga_network_new(const char *spec_json, struct LorgaNetwork **out);

/**
 * Releases a network. Null is ignored.
 *
 * # Safety
 * `net` must be null or a handle from this library that has not been freed.
 */
void lorga_network_free(struct LorgaNetwork *net);

/**
 * Network output for inputs `x` (`d_in × n`), as a new `d_out × n` matrix.
 *
 * # Safety
 * `net` and `x` must be live handles; `out` must be writable.
 */
enum LorgaStatus lorga_network_forward(const struct LorgaNetwork *net,
                                       const struct LorgaMatrix *x,
                                       struct LorgaMatrix **out);

/**
 * Mean loss over the columns of `x` against targets `t`.
 *
 * # Safety
 * `net`, `x` and `t` must be live handles; `out` must be writable.
 */
enum LorgaStatus lorga_network_loss(const struct LorgaNetwork *net,
                                    const struct LorgaMatrix *x,
                                    const struct LorgaMatrix *t,
                                    double *out);

/**
 * Runs LoRA-GA initialization on a copy of `net`, estimating gradients
 * from a batch sampled out of the pool (`pool_x`, `pool_t`).
 *
 * `config_json` configures the initialization, for example
 * `{"rank":4,"alpha":16,"gamma":16,"sampled_batch_size":32}`; null uses
 * the defaults. The adapted network is written to `out_net`. If
 * `out_report` is non-null it receives a JSON report that the caller
 * releases with [`lorga_string_free`].
 *
 * # Safety
 * Handles must be live; `config_json` must be null or NUL-terminated;
 * `out_net` must be writable and `out_report` null or writable.
 */
enum LorgaStatus lorga_lora_ga_init(const struct LorgaNetwork *net,
                                    const char *config_json,
                                    const struct LorgaMatrix *pool_x,
                                    const struct LorgaMatrix *pool_t,
                                    struct LorgaNetwork **out_net,
                                    char **out_report);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lorga_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LORGA_H */
