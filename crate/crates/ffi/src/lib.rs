//! C ABI over the socmarket engine.
//!
//! Every call returns an [`SmStatus`]. On failure the message is kept per
//! thread and can be copied out with [`sm_last_error_message`]. Handles are
//! opaque: create with `*_new`, release with `*_free`. Panics never cross the
//! boundary and surface as `SM_STATUS_PANIC`.
//!
//! Storage ratings passed here are MWh per dispatch step.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use socmarket::benchmark::multi_period_dispatch_refined;
use socmarket::bidding::{make_bids, BidCurve, SamplingPlan, SegmentBid};
use socmarket::clearing::clear_pricetaker;
use socmarket::storage::{apply_dispatch, feasible_envelope, Dispatch, SegmentSpec, StorageSpec, StorageState};
use socmarket::valuation::{backward_induction, check_resolution, q_lookup, PriceSeries, SocGrid, ValueCurve};
use socmarket::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidSpec = 3,
    InvalidState = 4,
    Infeasible = 5,
    OutOfRange = 6,
    NonMonotoneBids = 7,
    InvalidGrid = 8,
    Internal = 9,
    Panic = 10,
}

/// One SoC segment, ordered from empty to full.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SmSegment {
    /// Upper SoC breakpoint (MWh).
    pub e_end: f64,
    /// Marginal discharge cost ($/MWh).
    pub cost: f64,
    /// Discharge rating (MWh per step).
    pub d_rating: f64,
    /// Charge rating (MWh per step).
    pub p_rating: f64,
    pub eta_d: f64,
    pub eta_p: f64,
}

/// Storage model plus its current state.
pub struct SmStorage {
    spec: StorageSpec,
    state: StorageState,
}

/// Marginal value curves on a SoC grid.
pub struct SmValueCurve {
    curve: ValueCurve,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidSpec { .. } => SmStatus::InvalidSpec,
            Error::InvalidState(_) => SmStatus::InvalidState,
            Error::InfeasibleDispatch(_) | Error::InfeasibleBalance { .. } | Error::Commitment { .. } => SmStatus::Infeasible,
            Error::OutOfRange(_) => SmStatus::OutOfRange,
            Error::NonMonotoneBids { .. } => SmStatus::NonMonotoneBids,
            Error::Grid(_) => SmStatus::InvalidGrid,
            Error::InvalidInput(_) | Error::TooLarge(_) | Error::Parse { .. } => SmStatus::InvalidArgument,
            _ => SmStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SmStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SmStatus::InvalidArgument, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SmStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SmStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn check_len(got: usize, want: usize, what: &str) -> Result<(), Failure> {
    if got != want {
        return Err(invalid(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL,
/// or 0 when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Creates a storage from `n` segments above `e_min`, starting at `e_min`.
///
/// # Safety
/// `segments` must point to `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_storage_new(segments: *const SmSegment, n: usize, e_min: f64, out: *mut *mut SmStorage) -> SmStatus {
    guard(|| {
        if segments.is_null() && n > 0 {
            return Err(null("segments"));
        }
        let segs: &[SmSegment] = if n == 0 { &[] } else { slice::from_raw_parts(segments, n) };
        let segs = segs
            .iter()
            .map(|s| SegmentSpec {
                e_end: s.e_end,
                cost: s.cost,
                d_rating: s.d_rating,
                p_rating: s.p_rating,
                eta_d: s.eta_d,
                eta_p: s.eta_p,
            })
            .collect();
        let spec = StorageSpec::new(e_min, segs)?;
        let state = StorageState::empty(&spec);
        put(out, SmStorage { spec, state })
    })
}

/// # Safety
/// `storage` must be null or a handle from [`sm_storage_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sm_storage_free(storage: *mut SmStorage) {
    if !storage.is_null() {
        drop(Box::from_raw(storage));
    }
}

/// # Safety
/// `storage` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sm_storage_segment_count(storage: *const SmStorage, out: *mut usize) -> SmStatus {
    guard(|| {
        let s = as_ref(storage, "storage")?;
        *as_mut(out, "out")? = s.spec.len();
        Ok(())
    })
}

/// Total SoC (MWh).
///
/// # Safety
/// `storage` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sm_storage_soc(storage: *const SmStorage, out: *mut f64) -> SmStatus {
    guard(|| {
        let s = as_ref(storage, "storage")?;
        *as_mut(out, "out")? = s.state.soc(&s.spec);
        Ok(())
    })
}

/// Energy held in each segment (MWh); `out` has one slot per segment.
///
/// # Safety
/// `storage` must be a live handle and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn sm_storage_segment_energy(storage: *const SmStorage, out: *mut f64, len: usize) -> SmStatus {
    guard(|| {
        let s = as_ref(storage, "storage")?;
        check_len(len, s.spec.len(), "out")?;
        output(out, len, "out")?.copy_from_slice(s.state.segments());
        Ok(())
    })
}

/// Resets the state to total SoC `soc`, filled from the bottom.
///
/// # Safety
/// `storage` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sm_storage_set_soc(storage: *mut SmStorage, soc: f64) -> SmStatus {
    guard(|| {
        let s = as_mut(storage, "storage")?;
        s.state = StorageState::from_soc(&s.spec, soc)?;
        Ok(())
    })
}

/// Largest total charge and discharge feasible in one step from the current state.
///
/// # Safety
/// `storage` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_storage_envelope(storage: *const SmStorage, max_charge: *mut f64, max_discharge: *mut f64) -> SmStatus {
    guard(|| {
        let s = as_ref(storage, "storage")?;
        let env = feasible_envelope(&s.spec, &s.state);
        *as_mut(max_charge, "max_charge")? = env.max_charge;
        *as_mut(max_discharge, "max_discharge")? = env.max_discharge;
        Ok(())
    })
}

/// Applies one step of per-segment charge `p_seg` and discharge `d_seg`
/// (grid-side MWh). Infeasible dispatches leave the state unchanged.
///
/// # Safety
/// `storage` must be a live handle; both arrays must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn sm_storage_apply(storage: *mut SmStorage, p_seg: *const f64, d_seg: *const f64, n: usize) -> SmStatus {
    guard(|| {
        let s = as_mut(storage, "storage")?;
        check_len(n, s.spec.len(), "dispatch")?;
        let p_seg = input(p_seg, n, "p_seg")?.to_vec();
        let d_seg = input(d_seg, n, "d_seg")?.to_vec();
        let dispatch = Dispatch {
            p: p_seg.iter().sum(),
            d: d_seg.iter().sum(),
            p_seg,
            d_seg,
        };
        s.state = apply_dispatch(&s.spec, &s.state, &dispatch)?;
        Ok(())
    })
}

/// Clears per-segment discharge bids `G` and charge bids `B` against a
/// fixed `price`. Writes the cleared per-segment quantities and the bid
/// surplus; when `apply` is nonzero the dispatch is also applied.
///
/// # Safety
/// `storage` must be a live handle; all arrays must hold `n` values;
/// `objective` may be null.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn sm_storage_clear(
    storage: *mut SmStorage,
    discharge_bids: *const f64,
    charge_bids: *const f64,
    n: usize,
    price: f64,
    apply: i32,
    p_seg: *mut f64,
    d_seg: *mut f64,
    objective: *mut f64,
) -> SmStatus {
    guard(|| {
        let s = as_mut(storage, "storage")?;
        check_len(n, s.spec.len(), "bids")?;
        let g = input(discharge_bids, n, "discharge_bids")?;
        let b = input(charge_bids, n, "charge_bids")?;
        let bids = BidCurve {
            hour: 0,
            segments: (0..n)
                .map(|i| SegmentBid {
                    e_lo: s.spec.lower(i),
                    e_hi: s.spec.segments()[i].e_end,
                    discharge: g[i],
                    charge: b[i],
                })
                .collect(),
        };
        let r = clear_pricetaker(&s.spec, &s.state, &bids, price)?;
        let p_out = output(p_seg, n, "p_seg")?;
        let d_out = output(d_seg, n, "d_seg")?;
        if apply != 0 {
            s.state = apply_dispatch(&s.spec, &s.state, &r.dispatch)?;
        }
        p_out.copy_from_slice(&r.dispatch.p_seg);
        d_out.copy_from_slice(&r.dispatch.d_seg);
        if let Some(o) = objective.as_mut() {
            *o = r.objective;
        }
        Ok(())
    })
}

/// Optimal look-ahead profit over `prices` from the current SoC, with the
/// SoC trajectory (`n + 1` values) written to `socs` when it is non-null.
///
/// # Safety
/// `storage` must be a live handle; `prices` must hold `n` values; `socs`
/// must be null or hold `n + 1` values; `profit` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_multi_period(
    storage: *const SmStorage,
    prices: *const f64,
    n: usize,
    grid_points: usize,
    profit: *mut f64,
    socs: *mut f64,
) -> SmStatus {
    guard(|| {
        let s = as_ref(storage, "storage")?;
        let series = PriceSeries::new(60, input(prices, n, "prices")?.to_vec())?;
        let grid = SocGrid::for_spec(&s.spec, grid_points)?;
        let sched = multi_period_dispatch_refined(&s.spec, &series, s.state.soc(&s.spec), &grid)?;
        *as_mut(profit, "profit")? = sched.objective;
        if !socs.is_null() {
            output(socs, n + 1, "socs")?.copy_from_slice(&sched.socs(&s.spec));
        }
        Ok(())
    })
}

/// Marginal value curves for `prices` (one per dispatch step of
/// `step_minutes`) on a uniform grid of `grid_points` over the SoC range.
///
/// # Safety
/// `storage` must be a live handle; `prices` must hold `n` values; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_value_curve_new(
    storage: *const SmStorage,
    prices: *const f64,
    n: usize,
    step_minutes: u32,
    grid_points: usize,
    out: *mut *mut SmValueCurve,
) -> SmStatus {
    guard(|| {
        let s = as_ref(storage, "storage")?;
        let series = PriceSeries::new(step_minutes, input(prices, n, "prices")?.to_vec())?;
        let grid = SocGrid::for_spec(&s.spec, grid_points)?;
        check_resolution(&s.spec, &grid)?;
        let curve = backward_induction(&s.spec, &series, &grid)?;
        put(out, SmValueCurve { curve })
    })
}

/// # Safety
/// `curve` must be null or a handle from [`sm_value_curve_new`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sm_value_curve_free(curve: *mut SmValueCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

/// Horizon `T` and grid size; curves exist for `t = 0..=T`.
///
/// # Safety
/// `curve` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sm_value_curve_shape(curve: *const SmValueCurve, steps: *mut usize, points: *mut usize) -> SmStatus {
    guard(|| {
        let c = as_ref(curve, "curve")?;
        *as_mut(steps, "steps")? = c.curve.steps();
        *as_mut(points, "points")? = c.curve.grid().points();
        Ok(())
    })
}

/// Copies `q_t` on the grid into `out`.
///
/// # Safety
/// `curve` must be a live handle; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn sm_value_curve_get(curve: *const SmValueCurve, t: usize, out: *mut f64, len: usize) -> SmStatus {
    guard(|| {
        let c = as_ref(curve, "curve")?;
        if t > c.curve.steps() {
            return Err(Failure(SmStatus::OutOfRange, format!("step {t} beyond horizon {}", c.curve.steps())));
        }
        check_len(len, c.curve.grid().points(), "out")?;
        output(out, len, "out")?.copy_from_slice(c.curve.q(t));
        Ok(())
    })
}

/// `q_t` at the grid point nearest SoC `e`.
///
/// # Safety
/// `curve` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sm_value_curve_lookup(curve: *const SmValueCurve, t: usize, e: f64, out: *mut f64) -> SmStatus {
    guard(|| {
        let c = as_ref(curve, "curve")?;
        *as_mut(out, "out")? = q_lookup(&c.curve, t, e)?;
        Ok(())
    })
}

/// Bids for hour `hour` on the segments of `market` (which may be a
/// coarser model of the same SoC range), from `samples` values per segment.
///
/// # Safety
/// Handles must be live; both arrays must hold one value per market segment.
#[no_mangle]
pub unsafe extern "C" fn sm_value_curve_bids(
    curve: *const SmValueCurve,
    market: *const SmStorage,
    hour: usize,
    samples: usize,
    discharge_bids: *mut f64,
    charge_bids: *mut f64,
    n: usize,
) -> SmStatus {
    guard(|| {
        let c = as_ref(curve, "curve")?;
        let m = as_ref(market, "market")?;
        check_len(n, m.spec.len(), "bids")?;
        let bids = make_bids(&c.curve, &m.spec, hour, SamplingPlan::new(samples)?)?;
        output(discharge_bids, n, "discharge_bids")?.copy_from_slice(&bids.discharge_bids());
        output(charge_bids, n, "charge_bids")?.copy_from_slice(&bids.charge_bids());
        Ok(())
    })
}
