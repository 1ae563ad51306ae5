#ifndef BERTRAND_H
#define BERTRAND_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  BERTRAND_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  BERTRAND_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  BERTRAND_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed input: bad JSON, out-of-range value.
   */
  BERTRAND_STATUS_USAGE = 3,
  /**
   * Inputs that do not fit together.
   */
  BERTRAND_STATUS_CONFIG = 4,
  /**
   * Construction parameters outside their defined range.
   */
  BERTRAND_STATUS_CONSTRUCTION = 5,
  /**
   * The CCE program could not be solved or certified.
   */
  BERTRAND_STATUS_SOLVER = 6,
  BERTRAND_STATUS_IO = 7,
  /**
   * A panic inside the library.
   */
  BERTRAND_STATUS_INTERNAL = 8,
} BertrandStatus;

/**
 * An equilibrium audit report.
 */
typedef struct BertrandAudit BertrandAudit;

/**
 * A solved extremal CCE.
 */
typedef struct BertrandCce BertrandCce;

/**
 * A price grid `{0, 1/K, ..., 1}`.
 */
typedef struct BertrandGrid BertrandGrid;

/**
 * A built strategy profile.
 */
typedef struct BertrandProfile BertrandProfile;

/**
 * Outcome of one run: metrics, CSV row and optional trace.
 */
typedef struct BertrandRun BertrandRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *bertrand_version(void);

/**
 * Message of the last failed call on this thread, or null when the last
 * call succeeded. Valid until the next library call on this thread.
 */
const char *bertrand_last_error(void);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string returned by this library, freed once.
 */
void bertrand_string_free(char *s);

/**
 * Creates the grid with step `1/k`.
 *
 * # Safety
 * `out` must be valid for one pointer write.
 */
BertrandStatus bertrand_grid_new(uint32_t k, BertrandGrid **out);

/**
 * # Safety
 * `grid` must be a live handle.
 */
uint32_t bertrand_grid_k(const BertrandGrid *grid);

/**
 * # Safety
 * `grid` must be null or a handle from [`bertrand_grid_new`], freed once.
 */
void bertrand_grid_free(BertrandGrid *grid);

/**
 * One-shot Bertrand payoffs of `n` posted grid indices: the lowest price
 * wins, ties split. Writes `n` values to `payoffs`.
 *
 * # Safety
 * `grid` must be live; `prices` and `payoffs` must hold `n` elements.
 */
BertrandStatus bertrand_payoffs_of(const BertrandGrid *grid,
                                   const uint32_t *prices,
                                   size_t n,
                                   double *payoffs);

/**
 * Builds a profile from its JSON description (tagged by `construction`).
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` valid for one write.
 */
BertrandStatus bertrand_profile_from_json(const char *json, BertrandProfile **out);

/**
 * Number of seats, or 0 for a null handle.
 *
 * # Safety
 * `profile` must be null or live.
 */
size_t bertrand_profile_players(const BertrandProfile *profile);

/**
 * Grid parameter `K`, or 0 for a null handle.
 *
 * # Safety
 * `profile` must be null or live.
 */
uint32_t bertrand_profile_k(const BertrandProfile *profile);

/**
 * # Safety
 * `profile` must be null or a handle from this library, freed once.
 */
void bertrand_profile_free(BertrandProfile *profile);

/**
 * Executes a run config (the JSON accepted by `bertrand run`).
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` valid for one write.
 */
BertrandStatus bertrand_run_from_json(const char *json, BertrandRun **out);

/**
 * Time-averaged expected market price, NaN for a null handle.
 *
 * # Safety
 * `run` must be null or live.
 */
double bertrand_run_market_price(const BertrandRun *run);

/**
 * Cross-replicate standard error of the market price.
 *
 * # Safety
 * `run` must be null or live.
 */
double bertrand_run_stderr(const BertrandRun *run);

/**
 * Number of per-seat utilities.
 *
 * # Safety
 * `run` must be null or live.
 */
size_t bertrand_run_players(const BertrandRun *run);

/**
 * Copies up to `len` per-seat mean utilities into `out` and returns the
 * number of seats.
 *
 * # Safety
 * `run` must be live; `out` must hold `len` elements (or be null with
 * `len == 0`).
 */
size_t bertrand_run_utilities(const BertrandRun *run, double *out, size_t len);

/**
 * Run metrics as JSON; release with [`bertrand_string_free`].
 *
 * # Safety
 * `run` must be live; `out` valid for one write.
 */
BertrandStatus bertrand_run_metrics_json(const BertrandRun *run, char **out);

/**
 * Trace as JSON, or null when the run recorded none.
 *
 * # Safety
 * `run` must be live; `out` valid for one write.
 */
BertrandStatus bertrand_run_trace_json(const BertrandRun *run, char **out);

/**
 * # Safety
 * `run` must be null or a handle from this library, freed once.
 */
void bertrand_run_free(BertrandRun *run);

/**
 * Audits a profile. Accepts the JSON of `bertrand audit`: either
 * `{"profile": .., "T": ..}` or a bare profile.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` valid for one write.
 */
BertrandStatus bertrand_audit_from_json(const char *json, BertrandAudit **out);

/**
 * Certified equilibrium slack (largest per-player gain, floored at 0).
 *
 * # Safety
 * `audit` must be null or live.
 */
double bertrand_audit_eq_slack(const BertrandAudit *audit);

/**
 * The full report as JSON; release with [`bertrand_string_free`].
 *
 * # Safety
 * `audit` must be live; `out` valid for one write.
 */
BertrandStatus bertrand_audit_json(const BertrandAudit *audit, char **out);

/**
 * # Safety
 * `audit` must be null or a handle from this library, freed once.
 */
void bertrand_audit_free(BertrandAudit *audit);

/**
 * Solves the symmetric CCE of `m` sellers on the `1/k` grid maximizing
 * the expected minimum price.
 *
 * # Safety
 * `out` must be valid for one write.
 */
BertrandStatus bertrand_cce_solve(size_t m, uint32_t k, double tolerance, BertrandCce **out);

/**
 * Optimal expected minimum price.
 *
 * # Safety
 * `cce` must be null or live.
 */
double bertrand_cce_objective(const BertrandCce *cce);

/**
 * Re-checks the solution with an independent evaluator.
 *
 * # Safety
 * `cce` must be live.
 */
BertrandStatus bertrand_cce_certify(const BertrandCce *cce, double tolerance);

/**
 * The solution as JSON; release with [`bertrand_string_free`].
 *
 * # Safety
 * `cce` must be live; `out` valid for one write.
 */
BertrandStatus bertrand_cce_json(const BertrandCce *cce, char **out);

/**
 * # Safety
 * `cce` must be null or a handle from this library, freed once.
 */
void bertrand_cce_free(BertrandCce *cce);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BERTRAND_H */
