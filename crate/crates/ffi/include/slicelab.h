/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef SLICELAB_H
#define SLICELAB_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum SlStatus {
  SL_STATUS_OK = 0,
  SL_STATUS_NULL_POINTER = 1,
  SL_STATUS_INVALID_UTF8 = 2,
  // The scenario text is not well-formed.
  SL_STATUS_PARSE = 3,
  // Well-formed input that violates an invariant.
  SL_STATUS_INVALID_INPUT = 4,
  // An output buffer is shorter than required.
  SL_STATUS_BUFFER_TOO_SMALL = 5,
  SL_STATUS_UNKNOWN_SLICE = 6,
  // The computation itself failed.
  SL_STATUS_RUNTIME = 7,
  SL_STATUS_PANIC = 8,
} SlStatus;

// The result of one reconfiguration run.
typedef struct SlOutcome SlOutcome;

// A validated scenario with its run settings.
typedef struct SlScenario SlScenario;

typedef struct SlRunSummary {
  size_t iterations;
  bool converged;
  bool max_iters_exceeded;
  // Stop metric of the last iteration.
  double final_stop_metric;
} SlRunSummary;

// QoE measured at the final allocation.
typedef struct SlQoe {
  double mean_delay_ms;
  double max_delay_ms;
  double throughput;
  double penalty;
} SlQoe;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Parses and validates a scenario from NUL-terminated TOML text.
//
// # Safety
// `toml` must be a valid C string and `out` a writable pointer.
enum SlStatus sl_scenario_from_toml(const char *toml, struct SlScenario **out);

// The built-in three-slice reference scenario.
//
// # Safety
// `out` must be a writable pointer.
enum SlStatus sl_scenario_reference(struct SlScenario **out);

// Releases a scenario. Null is ignored.
//
// # Safety
// `scenario` must come from this library and not be used afterwards.
void sl_scenario_free(struct SlScenario *scenario);

// Number of slices and of resource coordinates (edges, then cores).
//
// # Safety
// `scenario` must be a live handle; the outputs must be writable.
enum SlStatus sl_scenario_dims(const struct SlScenario *scenario,
                               size_t *n_slices,
                               size_t *n_resources);

// Writes the slice ids in allocation order into `ids[0..len]`.
//
// # Safety
// `ids` must point to `len` writable values.
enum SlStatus sl_scenario_slice_ids(const struct SlScenario *scenario, uint32_t *ids, size_t len);

// Selects the transfer rule by name: `algorithm1`, `conservative` or
// `exchange`.
//
// # Safety
// `scenario` must be a live handle and `rule` a valid C string.
enum SlStatus sl_scenario_set_transfer_rule(struct SlScenario *scenario, const char *rule);

// Euclidean projection of `y[0..n]` onto `{x >= 0, sum(x) <= 1}`, written
// to `out[0..n]`. The buffers may alias.
//
// # Safety
// Both pointers must be valid for `n` values.
enum SlStatus sl_project_capped_simplex(const double *y, double *out, size_t n);

// Runs the reconfiguration from the scenario's initial allocation.
//
// # Safety
// `scenario` must be a live handle and `out` writable.
enum SlStatus sl_run_osra(const struct SlScenario *scenario, uint64_t seed, struct SlOutcome **out);

// Releases an outcome. Null is ignored.
//
// # Safety
// `outcome` must come from this library and not be used afterwards.
void sl_outcome_free(struct SlOutcome *outcome);

// # Safety
// `outcome` must be a live handle and `summary` writable.
enum SlStatus sl_outcome_summary(const struct SlOutcome *outcome, struct SlRunSummary *summary);

// Final allocation of one slice: `len` must be at least the number of
// resource coordinates.
//
// # Safety
// `outcome` must be a live handle and `out` valid for `len` values.
enum SlStatus sl_outcome_final_alloc(const struct SlOutcome *outcome,
                                     uint32_t slice,
                                     double *out,
                                     size_t len);

// QoE of one slice measured at the final allocation.
//
// # Safety
// `outcome` must be a live handle and `qoe` writable.
enum SlStatus sl_outcome_final_qoe(const struct SlOutcome *outcome,
                                   uint32_t slice,
                                   struct SlQoe *qoe);

// Copies the calling thread's last error message into `buf` (truncated,
// always NUL-terminated when `len > 0`). Returns the full message length
// plus one, so a caller can size the buffer; 1 means no error.
//
// # Safety
// `buf` must be valid for `len` bytes, or null with `len == 0`.
size_t sl_last_error_message(char *buf, size_t len);

// Library version as a static C string.
const char *sl_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SLICELAB_H */
