#ifndef SINCFB_H
#define SINCFB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by every function in this library.
typedef enum SincfbStatus {
  SINCFB_STATUS_OK = 0,
  SINCFB_STATUS_NULL_POINTER = 1,
  SINCFB_STATUS_INVALID_ARGUMENT = 2,
  SINCFB_STATUS_SHAPE_MISMATCH = 3,
  SINCFB_STATUS_UNSUPPORTED = 4,
  SINCFB_STATUS_SINGULAR_OPERATOR = 5,
  SINCFB_STATUS_NUMERIC_FAILURE = 6,
  SINCFB_STATUS_SAMPLE_RATE_MISMATCH = 7,
  SINCFB_STATUS_IO = 8,
  SINCFB_STATUS_FORMAT = 9,
  SINCFB_STATUS_BUFFER_TOO_SMALL = 10,
  SINCFB_STATUS_PANIC = 11,
} SincfbStatus;

// Opaque filterbank handle.
typedef struct SincfbFilterbank SincfbFilterbank;

// Opaque model handle (filterbank, mask and decoder).
typedef struct SincfbModel SincfbModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static nul-terminated string.
const char *sincfb_version(void);

// Message of the most recent failure on this thread, or null if none.
//
// The pointer stays valid until the next failing call on the same thread.
const char *sincfb_last_error(void);

// Release a string returned by this library.
//
// # Safety
// `s` must be null or a pointer obtained from this library and not yet freed.
void sincfb_string_free(char *s);

// Build `n` contiguous mel-spaced bands from `f_min` to Nyquist (unit gains, reformed mode).
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum SincfbStatus sincfb_filterbank_new_mel(size_t n,
                                            size_t kernel_len,
                                            uint32_t sample_rate,
                                            double f_min,
                                            struct SincfbFilterbank **out);

// Build `n` bands with cutoffs drawn uniformly from `[0, 1)` (unit gains, reformed mode).
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum SincfbStatus sincfb_filterbank_new_uniform(size_t n,
                                                size_t kernel_len,
                                                uint32_t sample_rate,
                                                uint64_t seed,
                                                struct SincfbFilterbank **out);

// Parse a filterbank from its JSON form.
//
// # Safety
// `json` must be a nul-terminated string; `out` must be writable.
enum SincfbStatus sincfb_filterbank_from_json(const char *json, struct SincfbFilterbank **out);

// Serialize a filterbank to JSON; free the result with [`sincfb_string_free`].
//
// # Safety
// `fb` must be a live handle; `out` must be writable.
enum SincfbStatus sincfb_filterbank_to_json(const struct SincfbFilterbank *fb, char **out);

// Release a filterbank handle. Null is ignored.
//
// # Safety
// `fb` must be null or a handle from this library not yet freed.
void sincfb_filterbank_free(struct SincfbFilterbank *fb);

// Number of filters, or 0 for a null handle.
//
// # Safety
// `fb` must be null or a live handle.
size_t sincfb_filterbank_len(const struct SincfbFilterbank *fb);

// Kernel length L, or 0 for a null handle.
//
// # Safety
// `fb` must be null or a live handle.
size_t sincfb_filterbank_kernel_len(const struct SincfbFilterbank *fb);

// Sample rate in Hz, or 0 for a null handle.
//
// # Safety
// `fb` must be null or a live handle.
uint32_t sincfb_filterbank_sample_rate(const struct SincfbFilterbank *fb);

// Normalized band edges (fractions of Nyquist) and gain of filter `index`.
//
// # Safety
// `fb` must be a live handle; the three outputs must be writable.
enum SincfbStatus sincfb_filterbank_band(const struct SincfbFilterbank *fb,
                                         size_t index,
                                         double *a1,
                                         double *a2,
                                         double *beta);

// Copy the `kernel_len` assembled taps of filter `index` into `out`.
//
// # Safety
// `fb` must be a live handle; `out` must hold `out_len` doubles.
enum SincfbStatus sincfb_filterbank_copy_taps(const struct SincfbFilterbank *fb,
                                              size_t index,
                                              double *out,
                                              size_t out_len);

// Number of encoder frames for a signal of `signal_len` samples at `hop`.
//
// # Safety
// `fb` must be a live handle; `frames` must be writable.
enum SincfbStatus sincfb_filterbank_frame_count(const struct SincfbFilterbank *fb,
                                                size_t signal_len,
                                                size_t hop,
                                                size_t *frames);

// Encode `signal` into an N x frames row-major feature matrix.
//
// `out_len` must be at least `N * frames`; see [`sincfb_filterbank_frame_count`].
//
// # Safety
// `fb` must be a live handle; `signal` must hold `signal_len` doubles and
// `out` must hold `out_len` doubles.
enum SincfbStatus sincfb_filterbank_encode(const struct SincfbFilterbank *fb,
                                           const double *signal,
                                           size_t signal_len,
                                           size_t hop,
                                           double *out,
                                           size_t out_len);

// Load a model checkpoint written by the command-line tool.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
enum SincfbStatus sincfb_model_load(const char *path, struct SincfbModel **out);

// Parse a model checkpoint from JSON text.
//
// # Safety
// `json` must be a nul-terminated string; `out` must be writable.
enum SincfbStatus sincfb_model_from_json(const char *json, struct SincfbModel **out);

// Release a model handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle from this library not yet freed.
void sincfb_model_free(struct SincfbModel *model);

// Sample rate the model was trained for, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
uint32_t sincfb_model_sample_rate(const struct SincfbModel *model);

// Copy the model's encoder filterbank into a new handle.
//
// # Safety
// `model` must be a live handle; `out` must be writable.
enum SincfbStatus sincfb_model_filterbank(const struct SincfbModel *model,
                                          struct SincfbFilterbank **out);

// Enhance `signal`; the output has the same length as the input.
//
// # Safety
// `model` must be a live handle; `signal` and `out` must each hold `len` doubles.
enum SincfbStatus sincfb_model_enhance(const struct SincfbModel *model,
                                       const double *signal,
                                       size_t len,
                                       double *out,
                                       size_t out_len);

// Scale-invariant SNR of `estimate` against `reference`, in dB.
//
// # Safety
// Both arrays must hold `len` doubles; `out_db` must be writable.
enum SincfbStatus sincfb_si_snr(const double *estimate,
                                const double *reference,
                                size_t len,
                                double *out_db);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SINCFB_H */
