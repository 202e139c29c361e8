#ifndef SPEECHCASCADE_H
#define SPEECHCASCADE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum ScStatus {
  SC_STATUS_OK = 0,
  SC_STATUS_NULL_POINTER = 1,
  SC_STATUS_INVALID_UTF8 = 2,
  SC_STATUS_IO = 3,
  SC_STATUS_PARSE = 4,
  SC_STATUS_ANNOTATION = 5,
  SC_STATUS_INVALID_INPUT = 6,
  SC_STATUS_DIMENSION_MISMATCH = 7,
  SC_STATUS_MISSING_CLASS = 8,
  SC_STATUS_UNTRAINED = 9,
  SC_STATUS_CONFIG = 10,
  SC_STATUS_SERIALIZATION = 11,
  SC_STATUS_BUFFER_TOO_SMALL = 12,
  SC_STATUS_PANIC = 13,
} ScStatus;

typedef enum ScPauseClass {
  SC_PAUSE_CLASS_SHORT = 0,
  SC_PAUSE_CLASS_MEDIUM = 1,
  SC_PAUSE_CLASS_LONG = 2,
} ScPauseClass;

typedef enum ScDiagnosis {
  SC_DIAGNOSIS_HC = 0,
  SC_DIAGNOSIS_MCI = 1,
  SC_DIAGNOSIS_DEMENTIA = 2,
} ScDiagnosis;

// Opaque trained cascade.
typedef struct ScCascade ScCascade;

// Opaque hashed n-gram featurizer.
typedef struct ScFeaturizer ScFeaturizer;

// Output of [`sc_cascade_infer`]. `stage2_probability` is NaN when stage 2
// was not consulted.
typedef struct ScCascadeResult {
  enum ScDiagnosis label;
  double stage1_probability;
  double stage2_probability;
  bool stage2_consulted;
} ScCascadeResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *sc_version(void);

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next call into the library on the same thread.
const char *sc_last_error_message(void);

// Frees a string returned by this library.
//
// # Safety
// `s` must be null or a pointer obtained from this library and not yet freed.
void sc_string_free(char *s);

// Pause class of a duration in seconds.
//
// # Safety
// `out` must be valid for writes.
enum ScStatus sc_classify_pause(double duration_sec, enum ScPauseClass *out);

// Pause-encodes alignment CSV text (`token,start_sec,end_sec`). Gaps shorter
// than `min_gap_sec` between words are ignored; pass a negative value for the
// library default. `*out` receives a space-separated token line.
//
// # Safety
// `alignment_csv` must be a NUL-terminated string; `out` must be valid for writes.
enum ScStatus sc_encode_alignment(const char *alignment_csv, double min_gap_sec, char **out);

// Removes annotation tags and punctuation from a raw transcript.
//
// # Safety
// `raw` must be a NUL-terminated string; `out` must be valid for writes.
enum ScStatus sc_strip_annotations(const char *raw, char **out);

// Number of components written by [`sc_silence_vector`].
size_t sc_silence_dim(void);

// Silence statistics of `n` speech segments `[starts[i], ends[i]]` in a
// recording of `total_duration_sec`. Writes `sc_silence_dim()` values.
//
// # Safety
// `starts` and `ends` must hold `n` values; `out` must hold `sc_silence_dim()`.
enum ScStatus sc_silence_vector(const double *starts,
                                const double *ends,
                                size_t n,
                                double total_duration_sec,
                                double *out);

// Creates a featurizer hashing the given n-gram orders into `dim` buckets.
//
// # Safety
// `orders` must hold `n_orders` values; `out` must be valid for writes.
enum ScStatus sc_featurizer_new(const size_t *orders,
                                size_t n_orders,
                                size_t dim,
                                uint64_t seed,
                                struct ScFeaturizer **out);

// Output length of a featurizer, 0 for a null handle.
//
// # Safety
// `h` must be null or a live featurizer handle.
size_t sc_featurizer_dim(const struct ScFeaturizer *h);

// Featurizes whitespace-separated tokens (for example an encoded line)
// into `out`, which must have room for `out_len >= dim` values.
//
// # Safety
// `h` must be a live handle, `text` NUL-terminated, `out` valid for `out_len` writes.
enum ScStatus sc_featurizer_apply(const struct ScFeaturizer *h,
                                  const char *text,
                                  double *out,
                                  size_t out_len);

// # Safety
// `h` must be null or a handle from [`sc_featurizer_new`] not yet freed.
void sc_featurizer_free(struct ScFeaturizer *h);

// Loads a cascade saved by the `train-cascade` command.
//
// # Safety
// `path` must be NUL-terminated; `out` must be valid for writes.
enum ScStatus sc_cascade_load(const char *path, struct ScCascade **out);

// Input length a cascade expects, 0 for a null handle.
//
// # Safety
// `h` must be null or a live cascade handle.
size_t sc_cascade_dim(const struct ScCascade *h);

// Routes one feature vector through both stages.
//
// # Safety
// `h` must be a live handle, `features` must hold `n` values and `out` be valid for writes.
enum ScStatus sc_cascade_infer(const struct ScCascade *h,
                               const double *features,
                               size_t n,
                               struct ScCascadeResult *out);

// # Safety
// `h` must be null or a handle from [`sc_cascade_load`] not yet freed.
void sc_cascade_free(struct ScCascade *h);

// Unweighted mean of per-class F1 over classes `0..n_classes`.
//
// # Safety
// `y_true` and `y_pred` must hold `n` values; `out` must be valid for writes.
enum ScStatus sc_macro_f1(const uint32_t *y_true,
                          const uint32_t *y_pred,
                          size_t n,
                          uint32_t n_classes,
                          double *out);

// Root mean squared error.
//
// # Safety
// `y_true` and `y_pred` must hold `n` values; `out` must be valid for writes.
enum ScStatus sc_rmse(const double *y_true, const double *y_pred, size_t n, double *out);

// Word error rate between two texts as an exact ratio `edits / ref_len`.
//
// # Safety
// Both texts must be NUL-terminated; `edits` and `ref_len` must be valid for writes.
enum ScStatus sc_wer(const char *reference, const char *hypothesis, size_t *edits, size_t *ref_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPEECHCASCADE_H */
