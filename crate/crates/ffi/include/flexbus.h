#ifndef FLEXBUS_H
#define FLEXBUS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  FLEX_STATUS_OK = 0,
  FLEX_STATUS_NULL_POINTER = 1,
  FLEX_STATUS_INVALID_UTF8 = 2,
  FLEX_STATUS_INVALID_INSTANCE = 3,
  FLEX_STATUS_INFEASIBLE = 4,
  FLEX_STATUS_INVALID_ARGUMENT = 5,
  FLEX_STATUS_IO = 6,
  FLEX_STATUS_SOLVER = 7,
  FLEX_STATUS_PANIC = 8,
} FlexStatus;

/**
 * Loaded instance with its algorithm parameters.
 */
typedef struct FlexInstance FlexInstance;

/**
 * Phase-1 plan.
 */
typedef struct FlexPlan FlexPlan;

/**
 * Cost summary of an evaluated plan.
 */
typedef struct {
  double fixed_cost;
  double expected_adhoc;
  double total_cost;
  size_t vehicles;
  double service_rate;
  bool proven_optimal;
} FlexCostSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a NUL-terminated string.
 *
 * Returns the full message length without the terminator; a return value ≥ `len` means the
 * message was truncated.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t flexbus_last_error(char *buf, size_t len);

/**
 * Parses and validates an instance from JSON text.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
FlexStatus flexbus_instance_from_json(const char *json, FlexInstance **out);

/**
 * # Safety
 * `inst` must be null or a handle from [`flexbus_instance_from_json`] not yet freed.
 */
void flexbus_instance_free(FlexInstance *inst);

/**
 * Number of zones and demand categories.
 *
 * # Safety
 * `inst` must be a live handle; the output pointers must be valid.
 */
FlexStatus flexbus_instance_size(const FlexInstance *inst, size_t *zones, size_t *categories);

/**
 * Phase-1 plan with every volume reliability at `rho_volume` and every detour reliability at
 * `rho_detour`.
 *
 * # Safety
 * `inst` must be a live handle and `out` a valid pointer.
 */
FlexStatus flexbus_plan_uniform(const FlexInstance *inst,
                                double rho_volume,
                                double rho_detour,
                                FlexPlan **out);

/**
 * Runs the reliability optimizer on `scenarios` draws of `seed`; 0 scenarios uses the
 * instance default. Writes the best plan and its cost.
 *
 * # Safety
 * `inst` must be a live handle; `out` and `report` must be valid pointers.
 */
FlexStatus flexbus_optimize(const FlexInstance *inst,
                            uint64_t seed,
                            size_t scenarios,
                            FlexPlan **out,
                            FlexCostSummary *report);

/**
 * # Safety
 * `plan` must be null or a handle not yet freed.
 */
void flexbus_plan_free(FlexPlan *plan);

/**
 * Fixed cost and vehicle count of a plan.
 *
 * # Safety
 * `plan` must be a live handle; the output pointers must be valid.
 */
FlexStatus flexbus_plan_info(const FlexPlan *plan, double *fixed_cost, size_t *vehicles);

/**
 * Expected cost of `plan` over `scenarios` draws of `seed`.
 *
 * # Safety
 * `inst` and `plan` must be live handles and `report` a valid pointer.
 */
FlexStatus flexbus_evaluate(const FlexInstance *inst,
                            const FlexPlan *plan,
                            uint64_t seed,
                            size_t scenarios,
                            FlexCostSummary *report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLEXBUS_H */
