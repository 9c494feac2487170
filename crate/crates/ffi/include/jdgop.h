#ifndef JDGOP_H
#define JDGOP_H

#pragma once

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum JdStatus {
  JD_STATUS_OK = 0,
  JD_STATUS_NULL_POINTER = 1,
  JD_STATUS_INVALID_UTF8 = 2,
  JD_STATUS_PARSE = 3,
  JD_STATUS_STRUCTURE = 4,
  JD_STATUS_ILL_CONDITIONED = 5,
  JD_STATUS_NO_GOP = 6,
  JD_STATUS_INADMISSIBLE = 7,
  JD_STATUS_UNSUPPORTED_CONSTRAINT = 8,
  JD_STATUS_INVALID_ARGUMENT = 9,
  JD_STATUS_HIGH_VARIANCE = 10,
  JD_STATUS_IO = 11,
  JD_STATUS_BUFFER_TOO_SMALL = 12,
  JD_STATUS_INVALID_MARKET = 13,
  JD_STATUS_PANIC = 99,
} JdStatus;

typedef enum JdRegime {
  JD_REGIME_MARTINGALE = 0,
  JD_REGIME_STRICT_SUPERMARTINGALE = 1,
  JD_REGIME_GOP_NONEXISTENT = 2,
} JdRegime;

typedef enum JdEquivalence {
  JD_EQUIVALENCE_EQUIVALENT = 0,
  JD_EQUIVALENCE_ABSOLUTELY_CONTINUOUS_ONLY = 1,
  JD_EQUIVALENCE_NOT_EQUIVALENT = 2,
} JdEquivalence;

typedef enum JdVerdict {
  JD_VERDICT_CONSISTENT_WITH_MARTINGALE = 0,
  JD_VERDICT_STRICT_SUPERMARTINGALE = 1,
  JD_VERDICT_INCONCLUSIVE = 2,
} JdVerdict;

// Opaque market handle.
typedef struct JdMarket JdMarket;

typedef struct JdMcResult {
  double mean;
  double std_error;
  double reference;
  enum JdVerdict verdict;
} JdMcResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *jd_last_error_message(void);

// Parses a market from JSON. Release the handle with `jd_market_free`.
//
// # Safety
// `json` must be a nul-terminated string and `out` a valid pointer.
enum JdStatus jd_market_from_json(const char *json, struct JdMarket **out);

// # Safety
// `handle` must come from `jd_market_from_json` and not be freed twice.
void jd_market_free(struct JdMarket *handle);

// # Safety
// Pointers must be valid; any output pointer may be null to skip it.
enum JdStatus jd_market_dims(const struct JdMarket *handle, size_t *d, size_t *m, size_t *pieces);

// Sets `valid` to whether the market satisfies the modelling assumptions.
//
// # Safety
// Pointers must be valid.
enum JdStatus jd_market_validate(const struct JdMarket *handle, bool *valid);

// # Safety
// Pointers must be valid.
enum JdStatus jd_market_regime(const struct JdMarket *handle, enum JdRegime *regime);

// Writes the `d` entries of the market price of risk on `piece`.
//
// # Safety
// `out` must hold `len` doubles.
enum JdStatus jd_market_price_of_risk(const struct JdMarket *handle,
                                      size_t piece,
                                      double *out,
                                      size_t len);

// Growth optimal fractions and volatilities (`d` entries each) and the
// optimal growth rate on `piece`. Any output may be null to skip it.
//
// # Safety
// Non-null arrays must hold `len` doubles.
enum JdStatus jd_gop_solve(const struct JdMarket *handle,
                           size_t piece,
                           double *fractions,
                           double *volatilities,
                           size_t len,
                           double *g_star);

// Growth rate of portfolio volatilities `c` given `theta` (both length
// `d`), `n_jumps` intensities and short rate `r`.
//
// # Safety
// Arrays must hold the stated number of doubles.
enum JdStatus jd_growth_rate(const double *c,
                             const double *theta,
                             size_t d,
                             const double *lambda,
                             size_t n_jumps,
                             double r,
                             double *out);

// Measure-change coefficients on `piece`: `m` diffusive multipliers and
// `d - m` jump multipliers.
//
// # Safety
// Arrays must hold the stated number of doubles; other outputs may be null.
enum JdStatus jd_deflator_solve(const struct JdMarket *handle,
                                size_t piece,
                                double *phi,
                                size_t phi_len,
                                double *psi,
                                size_t psi_len,
                                double *residual,
                                enum JdEquivalence *equivalence);

// Closed-form `E[Z_t]` of the inverse discounted GOP.
//
// # Safety
// Pointers must be valid.
enum JdStatus jd_deflator_expectation(const struct JdMarket *handle, double t, double *out);

// Monte Carlo estimate of `E[Z_t]` with its verdict.
//
// # Safety
// Pointers must be valid.
enum JdStatus jd_test_martingale(const struct JdMarket *handle,
                                 double t,
                                 size_t n_paths,
                                 uint64_t seed,
                                 struct JdMcResult *out);

// Runs a scenario given as JSON and returns its JSON report, to be released
// with `jd_string_free`.
//
// # Safety
// `json` must be a nul-terminated string and `report` a valid pointer.
enum JdStatus jd_run_scenario_json(const char *json, char **report);

// # Safety
// `s` must come from this library and not be freed twice.
void jd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* JDGOP_H */
