#ifndef PMSLT_H
#define PMSLT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PmsltStatus {
  PMSLT_STATUS_OK = 0,
  PMSLT_STATUS_NULL_POINTER = 1,
  PMSLT_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Unreadable or inconsistent input files.
   */
  PMSLT_STATUS_INPUT = 3,
  /**
   * BAU trend construction failed.
   */
  PMSLT_STATUS_FIT = 4,
  /**
   * The target cannot be reached inside the search bracket.
   */
  PMSLT_STATUS_UNREACHABLE = 5,
  PMSLT_STATUS_SOLVE = 6,
  PMSLT_STATUS_PROJECTION = 7,
  PMSLT_STATUS_PANIC = 8,
} PmsltStatus;

typedef enum PmsltSex {
  PMSLT_SEX_FEMALE = 0,
  PMSLT_SEX_MALE = 1,
} PmsltSex;

typedef enum PmsltScenario {
  PMSLT_SCENARIO_BAU = 0,
  PMSLT_SCENARIO_PREVENTION = 1,
  PMSLT_SCENARIO_TREATMENT_DEFAULT = 2,
  PMSLT_SCENARIO_TREATMENT_CFR_ONLY = 3,
  PMSLT_SCENARIO_TREATMENT_REMISSION_ONLY = 4,
  PMSLT_SCENARIO_BLENDED = 5,
} PmsltScenario;

typedef struct PmsltConfig PmsltConfig;

typedef struct PmsltProjection PmsltProjection;

/**
 * One country × sex stratum together with its run configuration.
 */
typedef struct PmsltStratum PmsltStratum;

/**
 * Solved acceleration. `delta` is the blend fraction for blended solves.
 */
typedef struct PmsltSolution {
  double delta;
  double achieved_reduction;
  uint32_t iterations;
} PmsltSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next `pmslt_*` call on the same thread.
 */
const char *pmslt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pmslt_version(void);

struct PmsltConfig *pmslt_config_new(void);

/**
 * Reads a TOML run configuration; omitted keys take their defaults.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PmsltStatus pmslt_config_load(const char *path, struct PmsltConfig **out);

/**
 * # Safety
 * `config` must come from this library and not be used afterwards.
 */
void pmslt_config_free(struct PmsltConfig *config);

/**
 * Loads one stratum from an input directory. `config` may be null for the
 * defaults.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum PmsltStatus pmslt_stratum_load(const char *data_dir,
                                    const char *country,
                                    enum PmsltSex sex,
                                    const struct PmsltConfig *config,
                                    struct PmsltStratum **out);

/**
 * # Safety
 * `stratum` must come from this library and not be used afterwards.
 */
void pmslt_stratum_free(struct PmsltStratum *stratum);

/**
 * Fits the BAU trajectories. Other stratum calls build them on first use.
 *
 * # Safety
 * `stratum` must be a valid handle.
 */
enum PmsltStatus pmslt_stratum_build_bau(struct PmsltStratum *stratum);

/**
 * Reduction in the indicator between baseline and target year under BAU.
 *
 * # Safety
 * `stratum` must be a valid handle and `out` a valid pointer.
 */
enum PmsltStatus pmslt_bau_reduction(struct PmsltStratum *stratum, double *out);

/**
 * Smallest acceleration of one channel meeting the target. Blended and BAU
 * are rejected; use [`pmslt_solve_blended`].
 *
 * # Safety
 * `stratum` must be a valid handle and `out` a valid pointer.
 */
enum PmsltStatus pmslt_solve(struct PmsltStratum *stratum,
                             enum PmsltScenario kind,
                             struct PmsltSolution *out);

/**
 * Blend fraction α applied to the given prevention and treatment deltas.
 *
 * # Safety
 * `stratum` must be a valid handle and `out` a valid pointer.
 */
enum PmsltStatus pmslt_solve_blended(struct PmsltStratum *stratum,
                                     double delta_prevention,
                                     double delta_treatment,
                                     struct PmsltSolution *out);

/**
 * Projects a single-channel scenario (or BAU, ignoring `delta`).
 *
 * # Safety
 * `stratum` must be a valid handle and `out` a valid pointer.
 */
enum PmsltStatus pmslt_project(struct PmsltStratum *stratum,
                               enum PmsltScenario kind,
                               double delta,
                               struct PmsltProjection **out);

/**
 * # Safety
 * `stratum` must be a valid handle and `out` a valid pointer.
 */
enum PmsltStatus pmslt_project_blended(struct PmsltStratum *stratum,
                                       double alpha,
                                       double delta_prevention,
                                       double delta_treatment,
                                       struct PmsltProjection **out);

/**
 * # Safety
 * `projection` must come from this library and not be used afterwards.
 */
void pmslt_projection_free(struct PmsltProjection *projection);

/**
 * First and last projected calendar years.
 *
 * # Safety
 * Pointers must be valid.
 */
enum PmsltStatus pmslt_projection_years(const struct PmsltProjection *projection,
                                        int32_t *first,
                                        int32_t *last);

/**
 * Projected NCD 40q30 in `year`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum PmsltStatus pmslt_projection_40q30(const struct PmsltProjection *projection,
                                        int32_t year,
                                        double *out);

/**
 * Start-of-year population at single-year `age`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum PmsltStatus pmslt_projection_population(const struct PmsltProjection *projection,
                                             uint32_t age,
                                             int32_t year,
                                             double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PMSLT_H */
