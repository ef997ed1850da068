#ifndef SOCMARKET_H
#define SOCMARKET_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SmStatus {
  SM_STATUS_OK = 0,
  SM_STATUS_NULL_POINTER = 1,
  SM_STATUS_INVALID_ARGUMENT = 2,
  SM_STATUS_INVALID_SPEC = 3,
  SM_STATUS_INVALID_STATE = 4,
  SM_STATUS_INFEASIBLE = 5,
  SM_STATUS_OUT_OF_RANGE = 6,
  SM_STATUS_NON_MONOTONE_BIDS = 7,
  SM_STATUS_INVALID_GRID = 8,
  SM_STATUS_INTERNAL = 9,
  SM_STATUS_PANIC = 10,
} SmStatus;

// Storage model plus its current state.
typedef struct SmStorage SmStorage;

// Marginal value curves on a SoC grid.
typedef struct SmValueCurve SmValueCurve;

// One SoC segment, ordered from empty to full.
typedef struct SmSegment {
  // Upper SoC breakpoint (MWh).
  double e_end;
  // Marginal discharge cost ($/MWh).
  double cost;
  // Discharge rating (MWh per step).
  double d_rating;
  // Charge rating (MWh per step).
  double p_rating;
  double eta_d;
  double eta_p;
} SmSegment;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL,
// or 0 when there is no error.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t sm_last_error_message(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *sm_version(void);

// Creates a storage from `n` segments above `e_min`, starting at `e_min`.
//
// # Safety
// `segments` must point to `n` values; `out` must be writable.
enum SmStatus sm_storage_new(const struct SmSegment *segments,
                             size_t n,
                             double e_min,
                             struct SmStorage **out);

// # Safety
// `storage` must be null or a handle from [`sm_storage_new`], not yet freed.
void sm_storage_free(struct SmStorage *storage);

// # Safety
// `storage` must be a live handle and `out` writable.
enum SmStatus sm_storage_segment_count(const struct SmStorage *storage, size_t *out);

// Total SoC (MWh).
//
// # Safety
// `storage` must be a live handle and `out` writable.
enum SmStatus sm_storage_soc(const struct SmStorage *storage, double *out);

// Energy held in each segment (MWh); `out` has one slot per segment.
//
// # Safety
// `storage` must be a live handle and `out` must hold `len` values.
enum SmStatus sm_storage_segment_energy(const struct SmStorage *storage, double *out, size_t len);

// Resets the state to total SoC `soc`, filled from the bottom.
//
// # Safety
// `storage` must be a live handle.
enum SmStatus sm_storage_set_soc(struct SmStorage *storage, double soc);

// Largest total charge and discharge feasible in one step from the current state.
//
// # Safety
// `storage` must be a live handle; outputs must be writable.
enum SmStatus sm_storage_envelope(const struct SmStorage *storage,
                                  double *max_charge,
                                  double *max_discharge);

// Applies one step of per-segment charge `p_seg` and discharge `d_seg`
// (grid-side MWh). Infeasible dispatches leave the state unchanged.
//
// # Safety
// `storage` must be a live handle; both arrays must hold `n` values.
enum SmStatus sm_storage_apply(struct SmStorage *storage,
                               const double *p_seg,
                               const double *d_seg,
                               size_t n);

// Clears per-segment discharge bids `G` and charge bids `B` against a
// fixed `price`. Writes the cleared per-segment quantities and the bid
// surplus; when `apply` is nonzero the dispatch is also applied.
//
// # Safety
// `storage` must be a live handle; all arrays must hold `n` values;
// `objective` may be null.
enum SmStatus sm_storage_clear(struct SmStorage *storage,
                               const double *discharge_bids,
                               const double *charge_bids,
                               size_t n,
                               double price,
                               int32_t apply,
                               double *p_seg,
                               double *d_seg,
                               double *objective);

// Optimal look-ahead profit over `prices` from the current SoC, with the
// SoC trajectory (`n + 1` values) written to `socs` when it is non-null.
//
// # Safety
// `storage` must be a live handle; `prices` must hold `n` values; `socs`
// must be null or hold `n + 1` values; `profit` must be writable.
enum SmStatus sm_multi_period(const struct SmStorage *storage,
                              const double *prices,
                              size_t n,
                              size_t grid_points,
                              double *profit,
                              double *socs);

// Marginal value curves for `prices` (one per dispatch step of
// `step_minutes`) on a uniform grid of `grid_points` over the SoC range.
//
// # Safety
// `storage` must be a live handle; `prices` must hold `n` values; `out`
// must be writable.
enum SmStatus sm_value_curve_new(const struct SmStorage *storage,
                                 const double *prices,
                                 size_t n,
                                 uint32_t step_minutes,
                                 size_t grid_points,
                                 struct SmValueCurve **out);

// # Safety
// `curve` must be null or a handle from [`sm_value_curve_new`], not yet freed.
void sm_value_curve_free(struct SmValueCurve *curve);

// Horizon `T` and grid size; curves exist for `t = 0..=T`.
//
// # Safety
// `curve` must be a live handle; outputs must be writable.
enum SmStatus sm_value_curve_shape(const struct SmValueCurve *curve, size_t *steps, size_t *points);

// Copies `q_t` on the grid into `out`.
//
// # Safety
// `curve` must be a live handle; `out` must hold `len` values.
enum SmStatus sm_value_curve_get(const struct SmValueCurve *curve,
                                 size_t t,
                                 double *out,
                                 size_t len);

// `q_t` at the grid point nearest SoC `e`.
//
// # Safety
// `curve` must be a live handle and `out` writable.
enum SmStatus sm_value_curve_lookup(const struct SmValueCurve *curve,
                                    size_t t,
                                    double e,
                                    double *out);

// Bids for hour `hour` on the segments of `market` (which may be a
// coarser model of the same SoC range), from `samples` values per segment.
//
// # Safety
// Handles must be live; both arrays must hold one value per market segment.
enum SmStatus sm_value_curve_bids(const struct SmValueCurve *curve,
                                  const struct SmStorage *market,
                                  size_t hour,
                                  size_t samples,
                                  double *discharge_bids,
                                  double *charge_bids,
                                  size_t n);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOCMARKET_H */
