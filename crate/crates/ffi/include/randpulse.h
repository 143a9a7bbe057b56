#ifndef RANDPULSE_H
#define RANDPULSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RpStatus {
  RP_STATUS_OK = 0,
  RP_STATUS_INVALID_ARGUMENT = 1,
  RP_STATUS_INFEASIBLE = 2,
  RP_STATUS_DECOHERENCE_FLOOR = 3,
  RP_STATUS_SOLVER_FAILURE = 4,
  RP_STATUS_IO = 5,
  RP_STATUS_NULL_POINTER = 6,
  RP_STATUS_PANIC = 7,
} RpStatus;

/**
 * Opaque lag measurement set.
 */
typedef struct RpMeasurements RpMeasurements;

/**
 * Opaque spectral density.
 */
typedef struct RpSpectrum RpSpectrum;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL.
 *
 * The pointer stays valid until the next call into this library.
 */
const char *rp_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rp_version(void);

/**
 * Parses a spectrum from its JSON form.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RpStatus rp_spectrum_from_json(const char *json, struct RpSpectrum **out);

/**
 * Sum of `n` Gaussian lines below `omega_c`.
 *
 * # Safety
 * The three arrays must hold `n` values each; `out` must be valid.
 */
enum RpStatus rp_spectrum_gaussian_peaks(const double *centers,
                                         const double *widths,
                                         const double *amplitudes,
                                         size_t n,
                                         double omega_c,
                                         struct RpSpectrum **out);

/**
 * # Safety
 * `spectrum` must come from this library and not be used afterwards.
 */
void rp_spectrum_free(struct RpSpectrum *spectrum);

/**
 * `S(ω)`.
 *
 * # Safety
 * `spectrum` and `out` must be valid.
 */
enum RpStatus rp_spectrum_evaluate(const struct RpSpectrum *spectrum, double omega, double *out);

/**
 * `W(ω) = |f̃(ω)|²` of a ±1 sign sequence with segment duration `tau`.
 *
 * # Safety
 * `signs` must hold `m` values; `out` must be valid.
 */
enum RpStatus rp_window(const int8_t *signs, size_t m, double tau, double omega, double *out);

/**
 * Closed-form window of `m` CPMG pulses spaced by `tau`.
 *
 * # Safety
 * `out` must be valid.
 */
enum RpStatus rp_cpmg_window(size_t m, double tau, double omega, double *out);

/**
 * Simulates one measurement per lag plus a base run, `M` segments of
 * `τ = π/ω_c`. `shots = 0` uses exact coherences.
 *
 * # Safety
 * `spectrum` and `out` must be valid and `lags` must hold `n_lags` values.
 */
enum RpStatus rp_acquire(const struct RpSpectrum *spectrum,
                         const size_t *lags,
                         size_t n_lags,
                         size_t segments,
                         size_t sequences,
                         uint64_t shots,
                         uint64_t seed,
                         struct RpMeasurements **out);

/**
 * Number of lag measurements.
 *
 * # Safety
 * `set` and `out` must be valid.
 */
enum RpStatus rp_measurements_len(const struct RpMeasurements *set, size_t *out);

/**
 * # Safety
 * `set` must come from this library and not be used afterwards.
 */
void rp_measurements_free(struct RpMeasurements *set);

/**
 * Reconstructs `S` on `grid_points` points of `(0, ω_c]` into `estimate`.
 * `folds = 0` uses the fixed `penalty` instead of cross-validation.
 *
 * # Safety
 * `set` must be valid and `estimate` must hold `grid_points` values.
 */
enum RpStatus rp_reconstruct(const struct RpMeasurements *set,
                             size_t grid_points,
                             size_t folds,
                             double penalty,
                             bool nonnegative,
                             double *estimate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RANDPULSE_H */
