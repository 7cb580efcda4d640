//! Static experiment data and seeded stochastic realizations.

mod config;
mod itinerary;
mod sampling;

pub use config::{
    action_grid, Branching, BuildingSpec, CommuteSpec, DemandModel, EvSpec, ExchangeBounds, HesSpec, HomeSpec,
    MicrogridConfig, MobilitySpec, OptimizerSpec, TransitionMatrix,
};
pub use itinerary::{Itinerary, Segment};
pub use sampling::{
    sample_charge_demand, sample_clock_stage, sample_itinerary, sample_trip_stages, sample_wind,
};

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::rng::{stream, Purpose};

/// One realized scenario: the wind actually blowing and every EV's
/// itinerary. Both repeat day after day.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    /// Realized wind, `[building][stage of day]`.
    pub wind_kw: Vec<Vec<f64>>,
    pub itineraries: Vec<Itinerary>,
    pub hash: String,
}

impl Scenario {
    pub fn generate(cfg: &MicrogridConfig, seed: u64) -> Self {
        let wind_kw = cfg
            .buildings
            .iter()
            .enumerate()
            .map(|(k, b)| {
                (0..cfg.stages)
                    .map(|t| {
                        let mut rng = stream(seed, Purpose::ScenarioWind, &[k as u64, t as u64]);
                        sample_wind(&mut rng, b.wind_forecast_kw[t], cfg.wind_rel_std, b.wind_capacity_kw)
                    })
                    .collect()
            })
            .collect();
        let itineraries = match &cfg.mobility {
            MobilitySpec::Fixed(its) => its.clone(),
            MobilitySpec::Commute(c) => (0..cfg.ev.count)
                .map(|ev| {
                    let mut rng = stream(seed, Purpose::ScenarioItinerary, &[ev as u64]);
                    sample_itinerary(&mut rng, c, &cfg.ev.demand, &cfg.physics(), cfg.stages, ev)
                })
                .collect(),
        };
        Scenario { seed, wind_kw, itineraries, hash: scenario_hash(cfg, seed) }
    }

    pub fn wind_at(&self, k: usize, stage: usize) -> f64 {
        let day = &self.wind_kw[k];
        day[stage % day.len()]
    }

    /// Absolute-stage segments of every EV over `days` days.
    pub fn expanded_segments(&self, days: usize, stages: usize) -> Vec<Vec<Segment>> {
        self.itineraries.iter().map(|it| it.expand(days, stages)).collect()
    }

    /// Empirical location transitions implied by the itineraries: for each
    /// stage of the first day, the share of EVs parked at building k that are
    /// at each building (or on the road) one stage later.
    pub fn empirical_transitions(&self, cfg: &MicrogridConfig) -> Vec<TransitionMatrix> {
        let k = cfg.building_count();
        let segs = self.expanded_segments(2, cfg.stages);
        let loc = |s: &[Segment], t: usize| {
            s.iter().find(|g| g.arrival_stage <= t && t < g.departure_stage()).map_or(0, |g| g.building)
        };
        (0..cfg.stages)
            .map(|t| {
                let mut counts = vec![vec![0.0; k + 1]; k];
                for s in &segs {
                    let (from, to) = (loc(s, t), loc(s, t + 1));
                    if from > 0 {
                        counts[from - 1][if to == 0 { k } else { to - 1 }] += 1.0;
                    }
                }
                let rows = counts
                    .into_iter()
                    .enumerate()
                    .map(|(i, row)| {
                        let n: f64 = row.iter().sum();
                        if n > 0.0 {
                            row.iter().map(|c| c / n).collect()
                        } else {
                            (0..=k).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
                        }
                    })
                    .collect();
                TransitionMatrix { stage: t, rows }
            })
            .collect()
    }

    /// CSV with one row per (stage, building) and one per (segment, EV).
    pub fn dump_csv(&self, cfg: &MicrogridConfig) -> String {
        let mut out = String::from("stage,entity,id,location,load_kw,wind_forecast_kw,wind_kw,parking_h,energy_kwh\n");
        for t in 0..cfg.stages {
            for (k, b) in cfg.buildings.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{t},building,{},{},{},{},{},,",
                    k + 1,
                    k + 1,
                    b.load_kw[t],
                    b.wind_forecast_kw[t],
                    self.wind_kw[k][t]
                );
            }
        }
        for it in &self.itineraries {
            for s in it.segments() {
                let _ = writeln!(
                    out,
                    "{},ev,{},{},,,,{},{}",
                    s.arrival_stage,
                    it.ev,
                    s.building,
                    s.parking_hours(cfg.dt_hours),
                    s.energy_kwh
                );
            }
        }
        out
    }
}

/// Hex digest of the validated configuration and the scenario seed.
pub fn scenario_hash(cfg: &MicrogridConfig, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(cfg.canonical_json().as_bytes());
    h.update(seed.to_le_bytes());
    h.finalize().iter().take(16).map(|b| format!("{b:02x}")).collect()
}

/// Built-in configurations.
pub mod presets {
    use super::MicrogridConfig;

    /// Two EVs at one building with known itineraries and no wind noise,
    /// small enough to enumerate every decision.
    pub const TINY_TOML: &str = include_str!("tiny.toml");

    pub fn tiny() -> MicrogridConfig {
        MicrogridConfig::from_toml_str(TINY_TOML).expect("built-in tiny config is valid")
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    pub fn tiny_config() -> super::MicrogridConfig {
        super::presets::tiny()
    }
}
