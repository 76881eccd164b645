/* SPDX-License-Identifier: Apache-2.0 */

#ifndef HFOG_H
#define HFOG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HfogPolicy {
  HFOG_POLICY_PROPOSED = 0,
  HFOG_POLICY_MAAS = 1,
  HFOG_POLICY_URMILA = 2,
} HfogPolicy;

/**
 * Result codes.
 */
typedef enum HfogStatus {
  HFOG_STATUS_OK = 0,
  HFOG_STATUS_NULL_POINTER = 1,
  HFOG_STATUS_INVALID_UTF8 = 2,
  /**
   * The scenario text could not be parsed or names an unknown scenario.
   */
  HFOG_STATUS_PARSE = 3,
  /**
   * A parameter is out of range.
   */
  HFOG_STATUS_INVALID = 4,
  /**
   * The run itself failed.
   */
  HFOG_STATUS_SIMULATION = 5,
  /**
   * A panic was caught at the boundary.
   */
  HFOG_STATUS_PANIC = 6,
} HfogStatus;

/**
 * Opaque scenario handle.
 */
typedef struct HfogScenario HfogScenario;

/**
 * Aggregate results of one run. `oracle_gap` is NaN when the optimality
 * study was not requested.
 */
typedef struct HfogMetrics {
  enum HfogPolicy technique;
  double horizon_s;
  uint64_t seed;
  uint32_t devices;
  double pdt_s;
  double artt_s;
  double aect_j;
  double awct;
  uint64_t migrations;
  double cmt_s;
  double cmec_j;
  double cmwc;
  uint64_t tit;
  bool fr_mode;
  bool fully_placed_at_horizon;
  double oracle_gap;
  uint64_t tasks_completed;
} HfogMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hfog_version(void);

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *hfog_last_error(void);

/**
 * Loads a bundled scenario by name, or a scenario file by path.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HfogStatus hfog_scenario_load(const char *name, struct HfogScenario **out);

/**
 * Parses a scenario from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HfogStatus hfog_scenario_from_toml(const char *toml, struct HfogScenario **out);

/**
 * Releases a scenario. NULL is ignored.
 *
 * # Safety
 * `s` must come from a constructor of this library and not be used again.
 */
void hfog_scenario_free(struct HfogScenario *s);

/**
 * Selects the policy, horizon and seed of the next run.
 *
 * # Safety
 * `s` must be a live handle.
 */
enum HfogStatus hfog_scenario_configure(struct HfogScenario *s,
                                        enum HfogPolicy policy,
                                        double horizon_s,
                                        uint64_t seed);

/**
 * Sets the number of devices and the application they run.
 *
 * # Safety
 * `s` must be a live handle and `app` a NUL-terminated string.
 */
enum HfogStatus hfog_scenario_set_devices(struct HfogScenario *s, uint32_t count, const char *app);

/**
 * Sets the migration failure probability and whether recovery is on.
 *
 * # Safety
 * `s` must be a live handle.
 */
enum HfogStatus hfog_scenario_set_failure(struct HfogScenario *s, double p, bool recovery);

/**
 * The scenario with every default filled in, as TOML. Free the result with
 * `hfog_string_free`.
 *
 * # Safety
 * `s` must be a live handle and `out` a valid pointer.
 */
enum HfogStatus hfog_scenario_effective_config(const struct HfogScenario *s, char **out);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `p` must come from this library and not be used again.
 */
void hfog_string_free(char *p);

/**
 * Runs the scenario to its horizon and writes the aggregates to `out`.
 * With `optimality` set, every placement is also solved exactly and
 * `oracle_gap` reports the mean relative gap.
 *
 * # Safety
 * `s` must be a live handle and `out` a valid pointer.
 */
enum HfogStatus hfog_run(const struct HfogScenario *s, bool optimality, struct HfogMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HFOG_H */
