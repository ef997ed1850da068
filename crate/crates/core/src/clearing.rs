//! Single-period clearing of SoC-segment bids.
//!
//! Because discharge bids rise and charge bids fall as SoC drops, the fill
//! order never forces the market to take an unprofitable segment before a
//! profitable one, and the one-step problem needs no binaries: discharge
//! segments top-down while `G_s < lambda`, charge bottom-up while
//! `B_s > lambda`. A segment whose bid equals the price is left idle.

use serde::{Deserialize, Serialize};

use crate::bidding::BidCurve;
use crate::error::{Error, Result};
use crate::gridsim::{allocate, find_price, wind_range, PriceFit, SupplyPoints, ThermalDispatch, ThermalStack};
use crate::storage::{drain_top_down, fill_bottom_up, Dispatch, StorageSpec, StorageState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingResult {
    /// Cleared per-segment quantities (MWh in the step).
    pub dispatch: Dispatch,
    pub price: f64,
    /// Bid surplus `sum_s (lambda - G_s) d_s + (B_s - lambda) p_s`.
    pub objective: f64,
}

/// Storage and thermal outcome of a joint clearing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketClearing {
    pub storage: ClearingResult,
    pub thermal: ThermalDispatch,
}

pub fn bid_surplus(bids: &BidCurve, dispatch: &Dispatch, price: f64) -> f64 {
    bids.segments
        .iter()
        .zip(dispatch.d_seg.iter().zip(&dispatch.p_seg))
        .map(|(b, (d, p))| (price - b.discharge) * d + (b.charge - price) * p)
        .sum()
}

fn check_bids(spec: &StorageSpec, bids: &BidCurve) -> Result<()> {
    if bids.segments.len() != spec.len() {
        return Err(Error::InvalidInput(format!(
            "{} bid segments for a {}-segment storage",
            bids.segments.len(),
            spec.len()
        )));
    }
    if bids
        .segments
        .iter()
        .any(|b| !b.discharge.is_finite() || !b.charge.is_finite())
    {
        return Err(Error::InvalidInput("non-finite bid".into()));
    }
    bids.check_monotone()
}

fn discharge_from(seg: Vec<f64>) -> Dispatch {
    let n = seg.len();
    Dispatch {
        p: 0.0,
        d: seg.iter().sum(),
        p_seg: vec![0.0; n],
        d_seg: seg,
    }
}

fn charge_from(seg: Vec<f64>) -> Dispatch {
    let n = seg.len();
    Dispatch {
        p: seg.iter().sum(),
        d: 0.0,
        p_seg: seg,
        d_seg: vec![0.0; n],
    }
}

/// Clears the bids against a fixed price.
pub fn clear_pricetaker(
    spec: &StorageSpec,
    state: &StorageState,
    bids: &BidCurve,
    price: f64,
) -> Result<ClearingResult> {
    check_bids(spec, bids)?;
    if !price.is_finite() {
        return Err(Error::InvalidInput(format!("price {price} is not finite")));
    }
    let g = bids.discharge_bids();
    let b = bids.charge_bids();
    let discharge = discharge_from(drain_top_down(spec, state, f64::INFINITY, |s| g[s] < price));
    let charge = charge_from(fill_bottom_up(spec, state, f64::INFINITY, |s| b[s] > price));
    let obj_d = bid_surplus(bids, &discharge, price);
    let obj_p = bid_surplus(bids, &charge, price);
    let (dispatch, objective) = if discharge.d > 0.0 && obj_d >= obj_p {
        (discharge, obj_d)
    } else if charge.p > 0.0 && obj_p > 0.0 {
        (charge, obj_p)
    } else {
        (Dispatch::idle(spec.len()), 0.0)
    };
    Ok(ClearingResult {
        dispatch,
        price,
        objective,
    })
}

/// Net storage injection (MWh in the step) the bids offer at `price`: left
/// and right limits, the span covering segments bid exactly at the price.
pub fn storage_response(spec: &StorageSpec, state: &StorageState, bids: &BidCurve, price: f64) -> (f64, f64) {
    let g = bids.discharge_bids();
    let b = bids.charge_bids();
    let sum = |v: Vec<f64>| v.iter().sum::<f64>();
    let d_strict = sum(drain_top_down(spec, state, f64::INFINITY, |s| g[s] < price));
    let d_weak = sum(drain_top_down(spec, state, f64::INFINITY, |s| g[s] <= price));
    let p_strict = sum(fill_bottom_up(spec, state, f64::INFINITY, |s| b[s] > price));
    let p_weak = sum(fill_bottom_up(spec, state, f64::INFINITY, |s| b[s] >= price));
    let lo = if p_weak > 0.0 { -p_weak } else { d_strict };
    let hi = if d_weak > 0.0 { d_weak } else { -p_strict };
    (lo, hi)
}

/// Clears storage bids jointly with the online thermal units against
/// `demand` (MW) with up to `wind` MW of free wind. One-hour interval.
///
/// When a storage segment is marginal it is settled at the clearing price
/// with a partial quantity.
pub fn clear_priceinfluencer(
    stack: &ThermalStack,
    demand: f64,
    wind: f64,
    spec: &StorageSpec,
    state: &StorageState,
    bids: &BidCurve,
) -> Result<MarketClearing> {
    check_bids(spec, bids)?;
    let mut prices: Vec<f64> = stack.breakpoints().to_vec();
    for seg in &bids.segments {
        prices.extend([seg.discharge, seg.charge].into_iter().filter(|p| *p >= 0.0));
    }
    prices.sort_by(f64::total_cmp);
    prices.dedup();

    let ranges: Vec<[(f64, f64); 3]> = prices
        .iter()
        .map(|&p| [wind_range(wind, p), stack.range_at(p), storage_response(spec, state, bids, p)])
        .collect();
    let points = SupplyPoints {
        prices: &prices,
        lo: |k: usize| ranges[k].iter().map(|r| r.0).sum::<f64>(),
        hi: |k: usize| ranges[k].iter().map(|r| r.1).sum::<f64>(),
    };
    let price = match find_price(&points, demand) {
        PriceFit::Price(p) => p,
        PriceFit::Short(mw) => {
            return Err(Error::InfeasibleBalance {
                shortfall_mw: mw,
                detail: format!("demand {demand:.3} MW exceeds thermal, wind and storage supply"),
            })
        }
        PriceFit::Excess(mw) => {
            return Err(Error::InfeasibleBalance {
                shortfall_mw: -mw,
                detail: format!("demand {demand:.3} MW below minimum generation net of storage charging"),
            })
        }
    };

    // Wind first, then thermal units, then storage within their ranges.
    let mut comp = vec![wind_range(wind, price)];
    comp.extend(stack.unit_ranges(price));
    comp.push(storage_response(spec, state, bids, price));
    let alloc = allocate(&comp, demand);
    let x = *alloc.last().unwrap();

    let g = bids.discharge_bids();
    let b = bids.charge_bids();
    let dispatch = if x > 0.0 {
        discharge_from(drain_top_down(spec, state, x, |s| g[s] <= price))
    } else if x < 0.0 {
        charge_from(fill_bottom_up(spec, state, -x, |s| b[s] >= price))
    } else {
        Dispatch::idle(spec.len())
    };
    let wind_used = alloc[0];
    let thermal_target = demand - wind_used - dispatch.net();
    let outputs = alloc[1..alloc.len() - 1].to_vec();
    let thermal = stack.finish(outputs, thermal_target, price, wind_used);
    let objective = bid_surplus(bids, &dispatch, price);
    Ok(MarketClearing {
        storage: ClearingResult {
            dispatch,
            price,
            objective,
        },
        thermal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bidding::SegmentBid;
    use crate::gridsim::GeneratorSpec;
    use crate::storage::{apply_dispatch, SegmentSpec};
    use rand::{Rng, SeedableRng};

    fn bids(spec: &StorageSpec, g: &[f64], b: &[f64]) -> BidCurve {
        BidCurve {
            hour: 0,
            segments: (0..spec.len())
                .map(|s| SegmentBid {
                    e_lo: spec.lower(s),
                    e_hi: spec.segments()[s].e_end,
                    discharge: g[s],
                    charge: b[s],
                })
                .collect(),
        }
    }

    fn unit(c_lin: f64, c_quad: f64, g_max: f64) -> GeneratorSpec {
        GeneratorSpec {
            id: "g".into(),
            c_lin,
            c_quad,
            c_noload: 0.0,
            c_start: 0.0,
            g_min: 0.0,
            g_max,
            t_up: 1,
            t_dn: 1,
        }
    }

    fn five(eta: f64) -> StorageSpec {
        StorageSpec::new(
            0.0,
            (0..5)
                .map(|i| SegmentSpec {
                    e_end: 0.2 * (i + 1) as f64,
                    cost: 20.0,
                    d_rating: 0.25,
                    p_rating: 0.25,
                    eta_d: eta,
                    eta_p: eta,
                })
                .collect(),
        )
        .unwrap()
    }

    /// Best bid surplus over per-segment quantity levels, each candidate
    /// screened by the storage model's own feasibility check.
    fn grid_oracle(spec: &StorageSpec, state: &StorageState, bc: &BidCurve, price: f64, levels: usize) -> (f64, f64) {
        let n = spec.len();
        let e = state.segments();
        let mut best = 0.0;
        let mut tol = 0.0;
        for side in 0..2 {
            let top: Vec<f64> = (0..n)
                .map(|s| {
                    let seg = &spec.segments()[s];
                    if side == 0 {
                        e[s] * seg.eta_d
                    } else {
                        (spec.width(s) - e[s]) / seg.eta_p
                    }
                })
                .collect();
            for s in 0..n {
                let slope = if side == 0 {
                    price - bc.segments[s].discharge
                } else {
                    bc.segments[s].charge - price
                };
                tol += slope.abs() * top[s] / (levels - 1) as f64;
            }
            let counts: Vec<usize> = top.iter().map(|t| if *t > 0.0 { levels } else { 1 }).collect();
            let total: usize = counts.iter().product();
            for mut code in 0..total {
                let mut q = vec![0.0; n];
                for s in 0..n {
                    let k = code % counts[s];
                    code /= counts[s];
                    q[s] = if counts[s] == 1 { 0.0 } else { top[s] * k as f64 / (levels - 1) as f64 };
                }
                let sum: f64 = q.iter().sum();
                let dispatch = if side == 0 {
                    Dispatch { p: 0.0, d: sum, p_seg: vec![0.0; n], d_seg: q }
                } else {
                    Dispatch { p: sum, d: 0.0, d_seg: vec![0.0; n], p_seg: q }
                };
                if apply_dispatch(spec, state, &dispatch).is_ok() {
                    best = f64::max(best, bid_surplus(bc, &dispatch, price));
                }
            }
        }
        (best, tol)
    }

    #[test]
    fn full_linear_discharges_at_rating() {
        let spec = StorageSpec::linear(1.0, 0.25, 0.9, 20.0).unwrap();
        let state = StorageState::full(&spec);
        let bc = bids(&spec, &[50.0], &[24.3]);
        let r = clear_pricetaker(&spec, &state, &bc, 60.0).unwrap();
        assert!((r.dispatch.d - 0.25).abs() < 1e-12 && r.dispatch.p == 0.0);
        let (oracle, tol) = grid_oracle(&spec, &state, &bc, 60.0, 101);
        assert!(r.objective >= oracle - 1e-12 && r.objective - oracle <= tol + 1e-9);

        let r = clear_pricetaker(&spec, &StorageState::from_soc(&spec, 0.5).unwrap(), &bc, 30.0).unwrap();
        assert_eq!(r.dispatch, Dispatch::idle(1));
        let tie = clear_pricetaker(&spec, &state, &bc, 50.0).unwrap();
        assert_eq!(tie.dispatch.d, 0.0);
    }

    #[test]
    fn only_the_top_segment_clears() {
        let spec = five(0.9);
        let bc = bids(&spec, &[60.0, 58.0, 56.0, 54.0, 45.0], &[40.0, 38.0, 36.0, 34.0, 30.0]);
        // Top segment holds 0.1 MWh, worth 0.09 MWh delivered.
        let state = StorageState::from_soc(&spec, 0.9).unwrap();
        let r = clear_pricetaker(&spec, &state, &bc, 50.0).unwrap();
        assert!((r.dispatch.d_seg[4] - 0.09).abs() < 1e-12);
        assert_eq!(r.dispatch.d_seg[..4], [0.0; 4]);
        let (oracle, tol) = grid_oracle(&spec, &state, &bc, 50.0, 11);
        assert!(r.objective >= oracle - 1e-12 && r.objective - oracle <= tol + 1e-9);
        // With the top segment empty, the next one bids above the price.
        let state = StorageState::from_soc(&spec, 0.8).unwrap();
        let r = clear_pricetaker(&spec, &state, &bc, 50.0).unwrap();
        assert_eq!(r.dispatch, Dispatch::idle(5));
    }

    #[test]
    fn rejects_non_monotone_bids() {
        let spec = five(0.9);
        let bc = bids(&spec, &[60.0, 58.0, 58.0, 54.0, 45.0], &[40.0, 38.0, 36.0, 34.0, 30.0]);
        let err = clear_pricetaker(&spec, &StorageState::empty(&spec), &bc, 50.0).unwrap_err();
        assert!(matches!(err, Error::NonMonotoneBids { .. }));
    }

    #[test]
    fn random_instances_match_grid_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..150 {
            let n = rng.gen_range(1..=4);
            let spec = StorageSpec::new(
                0.0,
                (0..n)
                    .map(|i| SegmentSpec {
                        e_end: 0.25 * (i + 1) as f64,
                        cost: rng.gen_range(0.0..30.0),
                        d_rating: rng.gen_range(0.05..0.3),
                        p_rating: rng.gen_range(0.05..0.3),
                        eta_d: rng.gen_range(0.8..1.0),
                        eta_p: rng.gen_range(0.8..1.0),
                    })
                    .collect(),
            )
            .unwrap();
            let state = StorageState::from_soc(&spec, rng.gen_range(0.0..spec.e_max())).unwrap();
            let mut g: Vec<f64> = (0..n).map(|_| rng.gen_range(20.0..80.0)).collect();
            g.sort_by(|a, b| b.total_cmp(a));
            let b: Vec<f64> = g.iter().enumerate().map(|(s, v)| v * 0.7 - s as f64).collect();
            let g: Vec<f64> = g.iter().enumerate().map(|(s, v)| v - 0.01 * s as f64).collect();
            let bc = bids(&spec, &g, &b);
            let price = rng.gen_range(0.0..100.0);
            let r = clear_pricetaker(&spec, &state, &bc, price).unwrap();
            apply_dispatch(&spec, &state, &r.dispatch).unwrap();
            let (oracle, tol) = grid_oracle(&spec, &state, &bc, price, 9);
            assert!(r.objective >= oracle - 1e-9, "{} < {oracle}", r.objective);
            assert!(r.objective - oracle <= tol + 1e-9);
        }
    }

    #[test]
    fn influencer_without_storage_is_plain_dispatch() {
        let fleet = vec![unit(20.0, 0.005, 100.0), unit(40.0, 0.0, 100.0)];
        let stack = ThermalStack::all_online(&fleet);
        let spec = StorageSpec::linear(1.0, 1e-9, 0.9, 20.0).unwrap();
        let state = StorageState::empty(&spec);
        let bc = bids(&spec, &[50.0], &[10.0]);
        let m = clear_priceinfluencer(&stack, 120.0, 0.0, &spec, &state, &bc).unwrap();
        assert_eq!(m.storage.price, 40.0);
        assert!((m.thermal.output[0] - 100.0).abs() < 1e-9);
        assert!((m.thermal.output[1] - 20.0).abs() < 1e-6);
    }

    /// Scans a fine price grid for the price where supply meets demand.
    fn lambda_grid_oracle(stack: &ThermalStack, demand: f64, spec: &StorageSpec, state: &StorageState, bc: &BidCurve) -> f64 {
        let mut p = 0.0;
        while p < 200.0 {
            let (_, th) = stack.range_at(p);
            let (_, st) = storage_response(spec, state, bc, p);
            if th + st >= demand - 1e-9 {
                return p;
            }
            p += 1e-3;
        }
        f64::NAN
    }

    #[test]
    fn storage_sets_the_price_or_hits_its_rating() {
        let fleet = vec![unit(20.0, 0.005, 100.0), unit(40.0, 0.0, 100.0)];
        let stack = ThermalStack::all_online(&fleet);
        for rating in [5.0, 15.0, 30.0] {
            let spec = StorageSpec::linear(100.0, rating, 0.9, 20.0).unwrap();
            let state = StorageState::full(&spec);
            let bc = bids(&spec, &[35.0], &[10.0]);
            let m = clear_priceinfluencer(&stack, 120.0, 0.0, &spec, &state, &bc).unwrap();
            let oracle = lambda_grid_oracle(&stack, 120.0, &spec, &state, &bc);
            assert!((m.storage.price - oracle).abs() < 2e-3, "{rating}: {} vs {oracle}", m.storage.price);
            if rating < 20.0 {
                assert_eq!(m.storage.price, 40.0);
                assert!((m.storage.dispatch.d - rating).abs() < 1e-9);
            } else {
                assert_eq!(m.storage.price, 35.0);
                assert!((m.storage.dispatch.d - 20.0).abs() < 1e-9);
            }
            let balance: f64 = m.thermal.output.iter().sum::<f64>() + m.storage.dispatch.net() - 120.0;
            assert!(balance.abs() < 1e-6);
        }
    }

    #[test]
    fn influencer_price_is_bracketed() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let fleet: Vec<GeneratorSpec> = (0..4)
                .map(|_| unit(rng.gen_range(10.0..60.0), rng.gen_range(0.0..0.02), rng.gen_range(50.0..150.0)))
                .collect();
            let stack = ThermalStack::all_online(&fleet);
            let spec = five(0.9).scale_ratings(40.0);
            let spec = StorageSpec::new(
                0.0,
                spec.segments()
                    .iter()
                    .map(|s| SegmentSpec { e_end: s.e_end * 200.0, ..*s })
                    .collect(),
            )
            .unwrap();
            let state = StorageState::from_soc(&spec, rng.gen_range(0.0..200.0)).unwrap();
            let g: Vec<f64> = (0..5).map(|s| 50.0 - 4.0 * s as f64).collect();
            let b: Vec<f64> = (0..5).map(|s| 30.0 - 4.0 * s as f64).collect();
            let bc = bids(&spec, &g, &b);
            let env = crate::storage::feasible_envelope(&spec, &state);
            let lo = stack.min_output() + env.max_charge;
            let hi = stack.max_output() - env.max_discharge;
            if lo >= hi {
                continue;
            }
            let demand = rng.gen_range(lo..hi);
            let m = clear_priceinfluencer(&stack, demand, 0.0, &spec, &state, &bc).unwrap();
            let low = stack.dispatch(demand - env.max_discharge, 0.0).unwrap().price;
            let high = stack.dispatch(demand + env.max_charge, 0.0).unwrap().price;
            assert!(m.storage.price >= low - 1e-9 && m.storage.price <= high + 1e-9);
            let balance = m.thermal.output.iter().sum::<f64>() + m.storage.dispatch.net() - demand;
            assert!(balance.abs() < 1e-6, "balance {balance}");
            apply_dispatch(&spec, &state, &m.storage.dispatch).unwrap();
            if m.storage.dispatch.net() > 0.0 {
                let non_marginal = bc.segments.iter().all(|s| s.discharge != m.storage.price);
                if non_marginal {
                    let pt = clear_pricetaker(&spec, &state, &bc, m.storage.price).unwrap();
                    assert!((pt.dispatch.d - m.storage.dispatch.d).abs() < 1e-9);
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn net_output_nondecreasing_in_price(soc in 0.0f64..1.0, a in -20.0f64..120.0, b in -20.0f64..120.0) {
            let spec = five(0.9);
            let state = StorageState::from_soc(&spec, soc).unwrap();
            let bc = bids(&spec, &[60.0, 58.0, 56.0, 54.0, 45.0], &[40.0, 38.0, 36.0, 34.0, 30.0]);
            let (lo, hi) = (a.min(b), a.max(b));
            let x = clear_pricetaker(&spec, &state, &bc, lo).unwrap().dispatch.net();
            let y = clear_pricetaker(&spec, &state, &bc, hi).unwrap().dispatch.net();
            proptest::prop_assert!(x <= y + 1e-12);
        }
    }
}
