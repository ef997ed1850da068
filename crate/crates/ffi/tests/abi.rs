use std::ffi::CStr;
use std::ptr;

use socmarket_ffi::*;

fn linear(n: usize) -> Vec<SmSegment> {
    (0..n)
        .map(|i| SmSegment {
            e_end: (i + 1) as f64 / n as f64,
            cost: 20.0,
            d_rating: 0.25,
            p_rating: 0.25,
            eta_d: 0.9,
            eta_p: 0.9,
        })
        .collect()
}

fn storage(n: usize) -> *mut SmStorage {
    let segs = linear(n);
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { sm_storage_new(segs.as_ptr(), n, 0.0, &mut h) }, SmStatus::Ok);
    h
}

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    let n = unsafe { sm_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn storage_lifecycle_and_dispatch() {
    let h = storage(4);
    unsafe {
        let mut n = 0;
        assert_eq!(sm_storage_segment_count(h, &mut n), SmStatus::Ok);
        assert_eq!(n, 4);
        let (mut pc, mut dc) = (0.0, 0.0);
        assert_eq!(sm_storage_envelope(h, &mut pc, &mut dc), SmStatus::Ok);
        assert!((pc - 0.25).abs() < 1e-12 && dc == 0.0);

        // Charge 0.2 MWh into the bottom segment: 0.18 MWh stored.
        let p = [0.2, 0.0, 0.0, 0.0];
        let d = [0.0; 4];
        assert_eq!(sm_storage_apply(h, p.as_ptr(), d.as_ptr(), 4), SmStatus::Ok);
        let mut soc = 0.0;
        sm_storage_soc(h, &mut soc);
        assert!((soc - 0.18).abs() < 1e-12);

        // Discharge from an empty upper segment is refused and leaves the state alone.
        let d = [0.0, 0.0, 0.0, 0.1];
        assert_eq!(sm_storage_apply(h, [0.0; 4].as_ptr(), d.as_ptr(), 4), SmStatus::Infeasible);
        assert!(!last_error().is_empty());
        sm_storage_soc(h, &mut soc);
        assert!((soc - 0.18).abs() < 1e-12);

        assert_eq!(sm_storage_set_soc(h, 0.6), SmStatus::Ok);
        let mut seg = [0.0; 4];
        assert_eq!(sm_storage_segment_energy(h, seg.as_mut_ptr(), 4), SmStatus::Ok);
        assert!((seg.iter().sum::<f64>() - 0.6).abs() < 1e-12);
        let s = sm_storage_set_soc(h, 2.0);
        assert!(matches!(s, SmStatus::OutOfRange | SmStatus::InvalidState), "{s:?}");
        sm_storage_free(h);
    }
}

#[test]
fn clearing_follows_bids() {
    let h = storage(2);
    unsafe {
        sm_storage_set_soc(h, 1.0);
        let g = [60.0, 40.0];
        let b = [15.0, 10.0];
        let (mut p, mut d, mut obj) = ([0.0; 2], [0.0; 2], 0.0);
        // Price between the two discharge bids: only the top segment sells.
        assert_eq!(sm_storage_clear(h, g.as_ptr(), b.as_ptr(), 2, 50.0, 1, p.as_mut_ptr(), d.as_mut_ptr(), &mut obj), SmStatus::Ok);
        assert!(d[0] == 0.0 && (d[1] - 0.25).abs() < 1e-12);
        assert!(p.iter().all(|v| *v == 0.0));
        assert!((obj - 0.25 * 10.0).abs() < 1e-9);
        let mut soc = 0.0;
        sm_storage_soc(h, &mut soc);
        assert!((soc - (1.0 - 0.25 / 0.9)).abs() < 1e-12);

        let bad = [40.0, 60.0];
        let s = sm_storage_clear(h, bad.as_ptr(), b.as_ptr(), 2, 50.0, 0, p.as_mut_ptr(), d.as_mut_ptr(), ptr::null_mut());
        assert_eq!(s, SmStatus::NonMonotoneBids);
        sm_storage_free(h);
    }
}

#[test]
fn values_bids_and_lookahead() {
    let h = storage(4);
    let prices = [20.0, 10.0, 80.0, 90.0, 15.0, 100.0];
    unsafe {
        let mut vc = ptr::null_mut();
        assert_eq!(sm_value_curve_new(h, prices.as_ptr(), prices.len(), 60, 101, &mut vc), SmStatus::Ok);
        let (mut steps, mut points) = (0, 0);
        sm_value_curve_shape(vc, &mut steps, &mut points);
        assert_eq!((steps, points), (6, 101));
        let mut q = vec![0.0; points];
        assert_eq!(sm_value_curve_get(vc, 0, q.as_mut_ptr(), points), SmStatus::Ok);
        assert!(q.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        assert_eq!(sm_value_curve_get(vc, 7, q.as_mut_ptr(), points), SmStatus::OutOfRange);
        let mut q0 = 0.0;
        assert_eq!(sm_value_curve_lookup(vc, 0, 0.0, &mut q0), SmStatus::Ok);
        assert_eq!(q0, q[0]);

        let market = storage(2);
        let (mut g, mut b) = ([0.0; 2], [0.0; 2]);
        assert_eq!(sm_value_curve_bids(vc, market, 0, 5, g.as_mut_ptr(), b.as_mut_ptr(), 2), SmStatus::Ok);
        assert!(g[0] > g[1] && b[0] > b[1]);
        assert_eq!(sm_value_curve_bids(vc, market, 0, 5, g.as_mut_ptr(), b.as_mut_ptr(), 3), SmStatus::InvalidArgument);

        let mut profit = 0.0;
        let mut socs = vec![0.0; prices.len() + 1];
        assert_eq!(sm_multi_period(h, prices.as_ptr(), prices.len(), 101, &mut profit, socs.as_mut_ptr()), SmStatus::Ok);
        assert!(profit > 0.0);
        assert_eq!(socs[0], 0.0);
        sm_value_curve_free(vc);
        sm_storage_free(market);
        sm_storage_free(h);
    }
}

#[test]
fn null_and_invalid_inputs() {
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(sm_storage_new(ptr::null(), 2, 0.0, &mut h), SmStatus::NullPointer);
        assert!(last_error().contains("null"));
        let mut segs = linear(2);
        segs[1].eta_d = 1.5;
        assert_eq!(sm_storage_new(segs.as_ptr(), 2, 0.0, &mut h), SmStatus::InvalidSpec);
        assert!(h.is_null());
        let mut soc = 0.0;
        assert_eq!(sm_storage_soc(ptr::null(), &mut soc), SmStatus::NullPointer);

        // A coarse grid is rejected rather than producing flat curves.
        let h = storage(1);
        let mut vc = ptr::null_mut();
        assert_eq!(sm_value_curve_new(h, [1.0].as_ptr(), 1, 60, 3, &mut vc), SmStatus::InvalidGrid);
        sm_storage_free(h);
        sm_storage_free(ptr::null_mut());
        sm_value_curve_free(ptr::null_mut());

        // Success clears the error.
        let h = storage(1);
        assert_eq!(sm_last_error_message(ptr::null_mut(), 0), 0);
        sm_storage_free(h);
        assert!(!CStr::from_ptr(sm_version()).to_bytes().is_empty());
    }
}
