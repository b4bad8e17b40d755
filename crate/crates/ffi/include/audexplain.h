#ifndef AUDEXPLAIN_H
#define AUDEXPLAIN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Kernel selection for [`AxpExplainConfig`].
typedef enum AxpKernel {
  // Uniform on exhaustive neighborhoods, exponential otherwise.
  AXP_KERNEL_AUTO = 0,
  AXP_KERNEL_UNIFORM = 1,
  AXP_KERNEL_EXPONENTIAL = 2,
} AxpKernel;

// Result of every fallible call.
typedef enum AxpStatus {
  AXP_STATUS_OK = 0,
  AXP_STATUS_NULL_POINTER = 1,
  AXP_STATUS_INVALID_UTF8 = 2,
  AXP_STATUS_INVALID_ARGUMENT = 3,
  AXP_STATUS_IO = 4,
  AXP_STATUS_AUDIO = 5,
  AXP_STATUS_DECOMPOSE = 6,
  AXP_STATUS_PREDICTOR = 7,
  AXP_STATUS_EXPLAIN = 8,
  AXP_STATUS_NO_POSITIVE_COEFFICIENTS = 9,
  AXP_STATUS_PANIC = 255,
} AxpStatus;

typedef struct AxpAudio AxpAudio;

typedef struct AxpDecomposition AxpDecomposition;

typedef struct AxpExplanation AxpExplanation;

typedef struct AxpPredictor AxpPredictor;

typedef struct AxpExplainConfig {
  size_t n_max;
  enum AxpKernel kernel;
  // Only read when `kernel` is `Exponential`.
  double kernel_width;
  double ridge_lambda;
  bool include_residual;
  uint64_t seed;
} AxpExplainConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null when the most
// recent status-returning call succeeded. Valid until the next
// status-returning call on the same thread.
const char *axp_last_error(void);

// Library version as a static NUL-terminated string.
const char *axp_version(void);

enum AxpStatus axp_audio_load(const char *path, struct AxpAudio **out);

// Copies `len` mono samples into a new buffer.
enum AxpStatus axp_audio_from_samples(const float *samples,
                                      size_t len,
                                      uint32_t sample_rate,
                                      struct AxpAudio **out);

enum AxpStatus axp_audio_save(const struct AxpAudio *audio, const char *path);

// Number of samples, or 0 for a null handle.
size_t axp_audio_len(const struct AxpAudio *audio);

// Sample rate in Hz, or 0 for a null handle.
uint32_t axp_audio_sample_rate(const struct AxpAudio *audio);

// Borrowed pointer to the samples, valid while `audio` lives.
const float *axp_audio_samples(const struct AxpAudio *audio);

void axp_audio_free(struct AxpAudio *audio);

// Harmonic/percussive separation of `audio`, split into `tau` time
// segments per source.
enum AxpStatus axp_decompose_hpss(const struct AxpAudio *audio,
                                  size_t harmonic_kernel,
                                  size_t percussive_kernel,
                                  size_t tau,
                                  struct AxpDecomposition **out);

// Oracle decomposition of a directory holding `mix.wav` and one WAV per
// stem.
enum AxpStatus axp_decompose_stem_dir(const char *dir, size_t tau, struct AxpDecomposition **out);

// Number of interpretable components, or 0 for a null handle.
size_t axp_decomposition_d_prime(const struct AxpDecomposition *d);

// Label of component `index`, or null when out of range.
const char *axp_decomposition_label(const struct AxpDecomposition *d, size_t index);

// New buffer with the mix of the components selected by `mask` (`d′`
// bytes, nonzero = keep).
enum AxpStatus axp_decomposition_remix(const struct AxpDecomposition *d,
                                       const uint8_t *mask,
                                       size_t mask_len,
                                       bool include_residual,
                                       struct AxpAudio **out);

void axp_decomposition_free(struct AxpDecomposition *d);

// Built-in classifier from a model file written by `train-builtin`.
enum AxpStatus axp_predictor_load_builtin(const char *model_path, struct AxpPredictor **out);

// External predictor run as `command` through the manifest protocol.
// `labels` is a comma-separated list and may be empty.
enum AxpStatus axp_predictor_external(const char *command,
                                      const char *workdir,
                                      double timeout_secs,
                                      const char *labels,
                                      struct AxpPredictor **out);

void axp_predictor_free(struct AxpPredictor *p);

struct AxpExplainConfig axp_explain_config_default(void);

// Explains `predictor`'s score for `target_label` on `d`. A null
// `target_label` explains the label predicted for the unperturbed mix; a
// null `config` uses the defaults.
enum AxpStatus axp_explain(const struct AxpDecomposition *d,
                           const struct AxpPredictor *predictor,
                           const char *target_label,
                           const struct AxpExplainConfig *config,
                           struct AxpExplanation **out);

// Number of coefficients, or 0 for a null handle.
size_t axp_explanation_len(const struct AxpExplanation *e);

// Copies up to `capacity` coefficients into `buf` in component order and
// returns the total count.
size_t axp_explanation_coefficients(const struct AxpExplanation *e, double *buf, size_t capacity);

// Surrogate intercept, or NaN for a null handle.
double axp_explanation_intercept(const struct AxpExplanation *e);

// Weighted correlation between surrogate and black box; 0 with
// `*defined = false` when either side is constant.
double axp_explanation_faithfulness(const struct AxpExplanation *e, bool *defined);

// Index of the component with the largest positive coefficient, or -1.
int64_t axp_explanation_top_component(const struct AxpExplanation *e);

const char *axp_explanation_target(const struct AxpExplanation *e);

const char *axp_explanation_label(const struct AxpExplanation *e, size_t index);

// The explanation serialized as JSON.
const char *axp_explanation_json(const struct AxpExplanation *e);

// Mix of the `k` components with the largest positive coefficients.
enum AxpStatus axp_explanation_render(const struct AxpExplanation *e,
                                      const struct AxpDecomposition *d,
                                      size_t k,
                                      struct AxpAudio **out);

void axp_explanation_free(struct AxpExplanation *e);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUDEXPLAIN_H */
