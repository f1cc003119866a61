#ifndef GUIDELAB_H
#define GUIDELAB_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  GL_STATUS_OK = 0,
  GL_STATUS_NULL_POINTER = 1,
  GL_STATUS_INVALID_ARGUMENT = 2,
  GL_STATUS_INVALID_UTF8 = 3,
  GL_STATUS_PARSE = 4,
  GL_STATUS_DIMENSION_MISMATCH = 5,
  GL_STATUS_OUT_OF_RANGE = 6,
  /**
   * Every chain of a batch diverged.
   */
  GL_STATUS_DIVERGED = 7,
  GL_STATUS_IO = 8,
  GL_STATUS_PANIC = 9,
} GlStatus;

typedef struct GlClassifier GlClassifier;

typedef struct GlDenoiser GlDenoiser;

typedef struct GlSchedule GlSchedule;

typedef struct GlStabilizer GlStabilizer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gl_version(void);

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call into the library on this thread.
 */
const char *gl_last_error(void);

/**
 * Linear beta schedule. `tilde_variance` selects the posterior variance
 * instead of beta for the reverse steps.
 */
GlStatus gl_schedule_linear(size_t steps,
                            double beta_start,
                            double beta_end,
                            bool tilde_variance,
                            GlSchedule **out);

void gl_schedule_free(GlSchedule *s);

size_t gl_schedule_steps(const GlSchedule *s);

/**
 * Cumulative product of alphas at `t` (`t = 0` gives 1).
 */
GlStatus gl_schedule_alpha_bar(const GlSchedule *s, size_t t, double *out);

/**
 * Analytic denoiser for a mixture given either as a preset name or as
 * mixture JSON. The schedule is copied.
 */
GlStatus gl_denoiser_new(const char *spec, const GlSchedule *schedule, GlDenoiser **out);

void gl_denoiser_free(GlDenoiser *d);

size_t gl_denoiser_dim(const GlDenoiser *d);

/**
 * Posterior mean of x0 given `x` (length `dim`) at step `t`, written to `out` (length `dim`).
 */
GlStatus gl_denoiser_posterior_mean(const GlDenoiser *d,
                                    const double *x,
                                    size_t dim,
                                    size_t t,
                                    double *out);

/**
 * Trained classifier from checkpoint JSON text.
 */
GlStatus gl_classifier_from_json(const char *json, bool robust, GlClassifier **out);

/**
 * Trained classifier from a checkpoint file.
 */
GlStatus gl_classifier_load(const char *path, bool robust, GlClassifier **out);

/**
 * Bayes-optimal classifier for the denoiser's mixture.
 */
GlStatus gl_classifier_oracle(const GlDenoiser *d, GlClassifier **out);

void gl_classifier_free(GlClassifier *c);

size_t gl_classifier_num_classes(const GlClassifier *c);

/**
 * Logits for `x` (length `dim`) into `out` (length `classes`).
 */
GlStatus gl_classifier_logits(const GlClassifier *c,
                              const double *x,
                              size_t dim,
                              double *out,
                              size_t classes);

/**
 * Stabilizer with fresh zero state. `kind` is `identity`, `ema:BETA`,
 * `adam` or `adam:B1:B2:EPS`.
 */
GlStatus gl_stabilizer_new(const char *kind, size_t dim, GlStabilizer **out);

void gl_stabilizer_free(GlStabilizer *s);

/**
 * Feeds gradient `g` and writes the stabilized vector to `out`; both of length `dim`.
 */
GlStatus gl_stabilizer_step(GlStabilizer *s, const double *g, size_t dim, double *out);

/**
 * Runs `n` guided chains. `path` is `raw`, `x0pred` or `x0pred-stopgrad`
 * and `stabilizer` uses the [`gl_stabilizer_new`] syntax. `samples` receives `n * dim` values row-major
 * (NaN rows for diverged chains), `diverged` receives `n` flags and
 * `n_diverged` the count. Returns `Diverged` if every chain diverged.
 */
GlStatus gl_sample_batch(const GlDenoiser *d,
                         const GlClassifier *c,
                         size_t target,
                         double scale,
                         const char *path,
                         const char *stabilizer,
                         size_t n,
                         uint64_t seed,
                         double *samples,
                         uint8_t *diverged,
                         size_t *n_diverged);

/**
 * Fréchet distance between Gaussians fitted to two row-major point sets.
 */
GlStatus gl_frechet_distance(const double *a,
                             size_t n_a,
                             const double *b,
                             size_t n_b,
                             size_t dim,
                             double *out);

/**
 * Static name of a status code.
 */
const char *gl_status_name(GlStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GUIDELAB_H */
