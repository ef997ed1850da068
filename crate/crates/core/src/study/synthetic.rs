//! Seeded synthetic inputs: real-time prices, a thermal fleet and
//! demand/wind scenarios.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::error::{Error, Result};
use crate::gridsim::{Fleet, GeneratorSpec, ScenarioData};
use crate::valuation::PriceSeries;

/// Intervals in a 365-day year at five minutes.
pub const YEAR_5MIN: usize = 105_120;

/// Knobs for the price generator. Defaults give a solar-dominated
/// "duck" day with a midday dip, an evening ramp and rare scarcity spikes.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceModel {
    pub base: f64,
    pub evening_peak: f64,
    pub morning_peak: f64,
    pub solar_dip: f64,
    /// Per-step AR(1) coefficient of the noise.
    pub ar_coef: f64,
    /// Stationary standard deviation of the noise ($/MWh).
    pub noise_std: f64,
    /// Probability that a spike starts in a given step.
    pub spike_rate: f64,
    pub spike_median: f64,
    /// Fraction of a spike left after each step.
    pub spike_decay: f64,
}

impl Default for PriceModel {
    fn default() -> Self {
        Self {
            base: 32.0,
            evening_peak: 30.0,
            morning_peak: 8.0,
            solar_dip: 22.0,
            ar_coef: 0.95,
            noise_std: 10.0,
            spike_rate: 0.004,
            spike_median: 250.0,
            spike_decay: 0.6,
        }
    }
}

fn bump(hour: f64, center: f64, width: f64) -> f64 {
    let x = (hour - center) / width;
    (-0.5 * x * x).exp()
}

impl PriceModel {
    /// Deterministic daily shape at fractional `hour` of `day`.
    fn shape(&self, day: usize, hour: f64, solar_depth: f64) -> f64 {
        let season = (2.0 * PI * (day as f64 - 172.0) / 365.0).cos();
        let solar = self.solar_dip * solar_depth * (1.0 + 0.3 * season) * bump(hour, 12.5, 2.6);
        self.base + 4.0 * season + self.morning_peak * bump(hour, 7.0, 1.2)
            + self.evening_peak * (1.0 + 0.2 * season) * bump(hour, 19.0, 1.6)
            - solar
    }

    pub fn generate(&self, seed: u64, days: usize, step_minutes: u32) -> Result<PriceSeries> {
        if step_minutes == 0 || 1440 % step_minutes != 0 {
            return Err(Error::InvalidInput(format!("step of {step_minutes} min does not divide a day")));
        }
        if !(0.0..1.0).contains(&self.ar_coef) || !(0.0..1.0).contains(&self.spike_decay) {
            return Err(Error::InvalidInput("AR and spike decay coefficients must lie in [0, 1)".into()));
        }
        let per_day = (1440 / step_minutes) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let innov = Normal::new(0.0, self.noise_std * (1.0 - self.ar_coef * self.ar_coef).sqrt())
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        let depth = Normal::new(1.0, 0.35).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let spike = LogNormal::new(self.spike_median.max(1e-9).ln(), 0.7).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut noise = 0.0;
        let mut surge = 0.0;
        let mut out = Vec::with_capacity(days * per_day);
        for day in 0..days {
            let solar_depth = f64::max(depth.sample(&mut rng), 0.0);
            for i in 0..per_day {
                let hour = (i as f64 + 0.5) * step_minutes as f64 / 60.0;
                noise = self.ar_coef * noise + innov.sample(&mut rng);
                surge *= self.spike_decay;
                if rng.gen::<f64>() < self.spike_rate {
                    surge += spike.sample(&mut rng);
                }
                out.push(self.shape(day, hour, solar_depth) + noise + surge);
            }
        }
        PriceSeries::new(step_minutes, out)
    }
}

/// One year of five-minute prices with the default model.
pub fn synthetic_prices(seed: u64, days: usize, step_minutes: u32) -> Result<PriceSeries> {
    PriceModel::default().generate(seed, days, step_minutes)
}

struct UnitClass {
    prefix: &'static str,
    count: usize,
    c_lin: f64,
    c_quad: f64,
    c_noload: f64,
    c_start: f64,
    g_min: f64,
    g_max: f64,
    t_up: u32,
    t_dn: u32,
}

const CLASSES: [UnitClass; 4] = [
    UnitClass { prefix: "base", count: 2, c_lin: 10.0, c_quad: 0.02, c_noload: 800.0, c_start: 20_000.0, g_min: 200.0, g_max: 400.0, t_up: 8, t_dn: 8 },
    UnitClass { prefix: "ccgt", count: 3, c_lin: 22.0, c_quad: 0.08, c_noload: 400.0, c_start: 5_000.0, g_min: 90.0, g_max: 250.0, t_up: 4, t_dn: 4 },
    UnitClass { prefix: "steam", count: 3, c_lin: 40.0, c_quad: 0.2, c_noload: 250.0, c_start: 2_000.0, g_min: 40.0, g_max: 150.0, t_up: 3, t_dn: 3 },
    UnitClass { prefix: "peak", count: 2, c_lin: 90.0, c_quad: 0.0, c_noload: 60.0, c_start: 300.0, g_min: 10.0, g_max: 150.0, t_up: 1, t_dn: 1 },
];

/// Ten-unit fleet of 2300 MW: two baseload units, three combined-cycle,
/// three steam and two linear-cost peakers. Costs are jittered by up to
/// 10% per unit from `seed`.
pub fn synthetic_fleet(seed: u64) -> Result<Fleet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut units = Vec::new();
    for class in &CLASSES {
        for j in 0..class.count {
            let jitter = 1.0 + rng.gen_range(-0.1..0.1);
            units.push(GeneratorSpec {
                id: format!("{}{}", class.prefix, j + 1),
                c_lin: class.c_lin * jitter,
                c_quad: class.c_quad * jitter,
                c_noload: class.c_noload,
                c_start: class.c_start,
                g_min: class.g_min,
                g_max: class.g_max,
                t_up: class.t_up,
                t_dn: class.t_dn,
            });
        }
    }
    Fleet::new(units)
}

/// Hourly demand with a ~950 MW night trough and a ~1800 MW evening peak
/// (mean near 1250 MW) and wind that blows harder at night.
pub fn synthetic_scenarios(seed: u64, count: usize) -> Result<Vec<ScenarioData>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
    (0..count)
        .map(|k| {
            let level = 1.0 + rng.gen_range(-0.05..0.05);
            let wind_level = rng.gen_range(0.5..1.5);
            let mut demand = Vec::with_capacity(24);
            let mut wind = Vec::with_capacity(24);
            for h in 0..24 {
                let x = h as f64 + 0.5;
                let d = 900.0 + 300.0 * bump(x, 10.5, 3.0) + 700.0 * bump(x, 18.5, 2.4) + 200.0 * bump(x, 14.0, 5.0);
                demand.push((level * d + 15.0 * noise.sample(&mut rng)).max(0.0));
                let w = 160.0 + 80.0 * (2.0 * PI * (x - 3.0) / 24.0).cos();
                wind.push((wind_level * w + 25.0 * noise.sample(&mut rng)).max(0.0));
            }
            ScenarioData::new(format!("s{}", k + 1), demand, wind)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prices_are_seeded_and_sized() {
        let a = synthetic_prices(7, 3, 5).unwrap();
        let b = synthetic_prices(7, 3, 5).unwrap();
        let c = synthetic_prices(8, 3, 5).unwrap();
        assert_eq!(a.len(), 3 * 288);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(synthetic_prices(1, 1, 7).is_err());
    }

    #[test]
    fn price_shape_has_evening_peak() {
        let p = synthetic_prices(3, 60, 60).unwrap();
        let mean_at = |h: usize| p.prices().iter().skip(h).step_by(24).sum::<f64>() / 60.0;
        assert!(mean_at(19) > mean_at(12) + 20.0);
        assert!(mean_at(19) > mean_at(3));
    }

    #[test]
    fn fleet_and_scenarios_are_consistent() {
        let fleet = synthetic_fleet(1).unwrap();
        assert_eq!(fleet.len(), 10);
        assert!((fleet.capacity() - 2300.0).abs() < 1e-9);
        let scen = synthetic_scenarios(1, 5).unwrap();
        assert_eq!(scen.len(), 5);
        let mean: f64 = scen.iter().flat_map(|s| s.demand()).sum::<f64>() / 120.0;
        assert!((1150.0..1450.0).contains(&mean), "mean demand {mean}");
        for s in &scen {
            assert_eq!(s.hours(), 24);
            assert!(s.peak_demand() * 1.1 < fleet.capacity());
        }
    }
}
