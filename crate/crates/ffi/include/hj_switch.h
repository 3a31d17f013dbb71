#ifndef HJ_SWITCH_H
#define HJ_SWITCH_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every fallible call.
 */
typedef enum HjsStatus {
  HJS_STATUS_OK = 0,
  HJS_STATUS_NULL_POINTER = 1,
  HJS_STATUS_INVALID_UTF8 = 2,
  HJS_STATUS_PARSE_ERROR = 3,
  HJS_STATUS_VALIDATION_ERROR = 4,
  HJS_STATUS_NUMERIC_ERROR = 5,
  HJS_STATUS_INVALID_ARGUMENT = 6,
  HJS_STATUS_BUFFER_TOO_SMALL = 7,
  HJS_STATUS_PANIC = 8,
} HjsStatus;

/*
 A grid vector function: `modes × nodes` values, mode-major.
 */
typedef struct HjsGrid HjsGrid;

/*
 A parsed and validated scenario.
 */
typedef struct HjsScenario HjsScenario;

/*
 A discretised problem ready for solving.
 */
typedef struct HjsScheme HjsScheme;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. The pointer
 stays valid until the next call into this library on the same thread.
 */
const char *hjs_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *hjs_version(void);

/*
 Parses scenario text (UTF-8, NUL-terminated) into `*out`.

 # Safety
 `text` must be a valid C string and `out` a valid pointer.
 */
enum HjsStatus hjs_scenario_parse(const char *text, struct HjsScenario **out);

/*
 # Safety
 `scenario` must come from [`hjs_scenario_parse`] or be NULL.
 */
void hjs_scenario_free(struct HjsScenario *scenario);

/*
 Builds the scheme described by the scenario's problem and numerics.

 # Safety
 `scenario` must be a live handle and `out` a valid pointer.
 */
enum HjsStatus hjs_scheme_build(const struct HjsScenario *scenario, struct HjsScheme **out);

/*
 # Safety
 `scheme` must come from [`hjs_scheme_build`] or be NULL.
 */
void hjs_scheme_free(struct HjsScheme *scheme);

/*
 Node count, mode count, control count and time step. Any output
 pointer may be NULL.

 # Safety
 `scheme` must be a live handle; non-null outputs must be writable.
 */
enum HjsStatus hjs_scheme_shape(const struct HjsScheme *scheme,
                                size_t *nodes,
                                size_t *modes,
                                size_t *controls,
                                double *h);

/*
 Solves the discounted system at rate `lambda` and constant `c`.

 # Safety
 `scheme` must be a live handle and `out` a valid pointer.
 */
enum HjsStatus hjs_solve_discounted(const struct HjsScheme *scheme,
                                    double lambda,
                                    double c,
                                    double tol,
                                    struct HjsGrid **out);

/*
 # Safety
 `grid` must be a live handle.
 */
size_t hjs_grid_nodes(const struct HjsGrid *grid);

/*
 # Safety
 `grid` must be a live handle.
 */
size_t hjs_grid_modes(const struct HjsGrid *grid);

/*
 Copies the `modes × nodes` values (mode-major) into `buffer`.

 # Safety
 `grid` must be a live handle and `buffer` must hold `len` doubles.
 */
enum HjsStatus hjs_grid_values(const struct HjsGrid *grid, double *buffer, size_t len);

/*
 # Safety
 `grid` must come from this library or be NULL.
 */
void hjs_grid_free(struct HjsGrid *grid);

/*
 Vanishing-discount estimate of the critical value over strictly
 decreasing rates; `error` may be NULL.

 # Safety
 `lambdas` must hold `len` doubles; `value` must be writable.
 */
enum HjsStatus hjs_estimate_critical_value(const struct HjsScheme *scheme,
                                           const double *lambdas,
                                           size_t len,
                                           double *value,
                                           double *error);

/*
 Critical value from the Mather program; `duality_gap` may be NULL.

 # Safety
 `scheme` must be a live handle; `value` must be writable.
 */
enum HjsStatus hjs_mather_critical_value(const struct HjsScheme *scheme,
                                         double tol,
                                         double *value,
                                         double *duality_gap);

/*
 Selected critical solution, using `measures` random face objectives.

 # Safety
 `scheme` must be a live handle and `out` a valid pointer.
 */
enum HjsStatus hjs_compute_u0(const struct HjsScheme *scheme,
                              size_t measures,
                              uint64_t seed,
                              struct HjsGrid **out);

/*
 Writes `e^{−tB}` (row-major, `m × m`) into `out` for the row-major
 coupling matrix `b`.

 # Safety
 `b` and `out` must each hold `m·m` doubles.
 */
enum HjsStatus hjs_transition_matrix(const double *b, size_t m, double t, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HJ_SWITCH_H */
