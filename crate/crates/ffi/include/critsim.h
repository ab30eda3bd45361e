#ifndef CRITSIM_H
#define CRITSIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CsStatus {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_POINTER = 1,
  CS_STATUS_INVALID_ARGUMENT = 2,
  CS_STATUS_IO = 3,
  CS_STATUS_SCHEMA = 4,
  CS_STATUS_GEOMETRY = 5,
  CS_STATUS_ROUTE = 6,
  CS_STATUS_INCOMPATIBLE = 7,
  CS_STATUS_INTERNAL = 99,
} CsStatus;

typedef enum CsVerdictKind {
  CS_VERDICT_KIND_NO_COLLISION = 0,
  CS_VERDICT_KIND_EGO_COLLISION = 1,
  CS_VERDICT_KIND_ADV_ADV_COLLISION = 2,
  CS_VERDICT_KIND_OFF_ROAD = 3,
} CsVerdictKind;

typedef struct CsAttackOutcome CsAttackOutcome;

typedef struct CsMap CsMap;

typedef struct CsPolicy CsPolicy;

typedef struct CsScenario CsScenario;

/**
 * Outcome of a rollout. `time_index` and the agent indices are -1 for
 * `NoCollision`.
 */
typedef struct CsVerdict {
  enum CsVerdictKind kind;
  int64_t time_index;
  int64_t agent_a;
  int64_t agent_b;
} CsVerdict;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Free with
 * `cs_string_free`.
 */
char *cs_last_error_message(void);

/**
 * # Safety
 * `s` must come from this library or be NULL.
 */
void cs_string_free(char *s);

/**
 * Generate a map from a template kind such as `"four_way_intersection"`.
 *
 * # Safety
 * `kind` must be a NUL-terminated string and `out` writable.
 */
enum CsStatus cs_map_generate(const char *kind, uint64_t seed, struct CsMap **out);

/**
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum CsStatus cs_map_from_json(const char *json, struct CsMap **out);

/**
 * # Safety
 * `map` must be a live handle and `out` writable.
 */
enum CsStatus cs_map_to_json(const struct CsMap *map, char **out);

/**
 * Signed distance to the road edge, positive on the road.
 *
 * # Safety
 * `map` must be a live handle and `out` writable.
 */
enum CsStatus cs_map_signed_distance(const struct CsMap *map, double x, double y, double *out);

/**
 * # Safety
 * `map` must come from this library or be NULL.
 */
void cs_map_free(struct CsMap *map);

/**
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum CsStatus cs_scenario_from_json(const char *json, struct CsScenario **out);

/**
 * # Safety
 * `scenario` must be a live handle and `out` writable.
 */
enum CsStatus cs_scenario_to_json(const struct CsScenario *scenario, char **out);

/**
 * Number of adversaries, or -1 for a NULL handle.
 *
 * # Safety
 * `scenario` must be a live handle or NULL.
 */
int64_t cs_scenario_num_adversaries(const struct CsScenario *scenario);

/**
 * Roll the scenario out against the rule-based ego, or the policy if one is
 * given.
 *
 * # Safety
 * `map` and `scenario` must be live handles, `policy` a live handle or NULL,
 * `out` writable.
 */
enum CsStatus cs_scenario_rollout(const struct CsMap *map,
                                  const struct CsScenario *scenario,
                                  const struct CsPolicy *policy,
                                  struct CsVerdict *out);

/**
 * # Safety
 * `scenario` must come from this library or be NULL.
 */
void cs_scenario_free(struct CsScenario *scenario);

/**
 * # Safety
 * `json` must be a NUL-terminated string and `out` writable.
 */
enum CsStatus cs_policy_from_json(const char *json, struct CsPolicy **out);

/**
 * # Safety
 * `policy` must come from this library or be NULL.
 */
void cs_policy_free(struct CsPolicy *policy);

/**
 * Attack `scenario` with `method` (`"king_direct"`, `"king_full"`,
 * `"random_search"`, `"simba"` or `"cma_es"`). Other settings take their
 * defaults. `king_full` needs a policy.
 *
 * # Safety
 * `map` and `scenario` must be live handles, `policy` a live handle or NULL,
 * `method` a NUL-terminated string and `out` writable.
 */
enum CsStatus cs_attack(const struct CsMap *map,
                        const struct CsScenario *scenario,
                        const struct CsPolicy *policy,
                        const char *method,
                        double budget_seconds,
                        uint64_t max_iterations,
                        uint64_t seed,
                        struct CsAttackOutcome **out);

/**
 * 1 if the attack found a certified ego collision, 0 if not, -1 for NULL.
 *
 * # Safety
 * `outcome` must be a live handle or NULL.
 */
int32_t cs_outcome_success(const struct CsAttackOutcome *outcome);

/**
 * # Safety
 * `outcome` must be a live handle or NULL.
 */
uint64_t cs_outcome_iterations(const struct CsAttackOutcome *outcome);

/**
 * NaN for NULL or when no rollout was evaluated.
 *
 * # Safety
 * `outcome` must be a live handle or NULL.
 */
double cs_outcome_best_cost(const struct CsAttackOutcome *outcome);

/**
 * # Safety
 * `outcome` must be a live handle and `out` writable.
 */
enum CsStatus cs_outcome_verdict(const struct CsAttackOutcome *outcome, struct CsVerdict *out);

/**
 * A copy of `scenario` with the outcome's best plan substituted.
 *
 * # Safety
 * `outcome` and `scenario` must be live handles and `out` writable.
 */
enum CsStatus cs_outcome_best_scenario(const struct CsAttackOutcome *outcome,
                                       const struct CsScenario *scenario,
                                       struct CsScenario **out);

/**
 * # Safety
 * `outcome` must come from this library or be NULL.
 */
void cs_outcome_free(struct CsAttackOutcome *outcome);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRITSIM_H */
