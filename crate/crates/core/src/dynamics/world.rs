use serde::{Deserialize, Serialize};

use super::{ev_step, BuildingOutcome, EvState, StageOutcome};
use crate::error::SimError;
use crate::events::{classify_evs, elastic_ratios, event_of, is_chargeable, EventObservation};
use crate::policy::Candidate;
use crate::scenario::{MicrogridConfig, Scenario, Segment};

/// Everything that is fixed once the scenario is drawn: realized wind and
/// every EV's stays on the absolute stage axis.
#[derive(Debug, Clone)]
pub struct Timeline {
    pub days: usize,
    pub segments: Vec<Vec<Segment>>,
    pub wind_kw: Vec<Vec<f64>>,
}

impl Timeline {
    /// Covers `days` days plus one more so look-ahead never runs off the end.
    pub fn new(cfg: &MicrogridConfig, scen: &Scenario, days: usize) -> Self {
        Timeline { days, segments: scen.expanded_segments(days + 1, cfg.stages), wind_kw: scen.wind_kw.clone() }
    }

    pub fn wind_at(&self, k: usize, stage: usize) -> f64 {
        let day = &self.wind_kw[k];
        day[stage % day.len()]
    }
}

/// What one building reports at the start of a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub n_m: usize,
    pub n_c: usize,
    pub wind_kw: f64,
    pub load_kw: f64,
    pub soc: f64,
    pub event: EventObservation,
    pub candidates: Vec<Candidate>,
}

/// The true microgrid state at the start of a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub stage: usize,
    pub evs: Vec<EvState>,
    pub soc: Vec<f64>,
    /// Index of each EV's next not-yet-started stay.
    pub next_segment: Vec<usize>,
    /// Stage at which each EV last left a building, with that building.
    pub last_departure: Vec<Option<(usize, usize)>>,
}

impl World {
    pub fn start(cfg: &MicrogridConfig, timeline: &Timeline) -> Self {
        let n = timeline.segments.len();
        let mut w = World {
            stage: 0,
            evs: vec![EvState::ON_ROAD; n],
            soc: vec![cfg.hes.initial_soc; cfg.building_count()],
            next_segment: vec![0; n],
            last_departure: vec![None; n],
        };
        w.admit_arrivals(cfg, timeline);
        w
    }

    fn admit_arrivals(&mut self, cfg: &MicrogridConfig, timeline: &Timeline) {
        for (i, segs) in timeline.segments.iter().enumerate() {
            if let Some(s) = segs.get(self.next_segment[i]) {
                if s.arrival_stage == self.stage {
                    self.evs[i] = EvState::parked(s.parking_hours(cfg.dt_hours), s.energy_kwh, s.building);
                    self.next_segment[i] += 1;
                }
            }
        }
    }

    pub fn parked_at(&self, building: usize) -> impl Iterator<Item = (usize, &EvState)> {
        self.evs.iter().enumerate().filter(move |(_, e)| e.location == building)
    }

    /// Observation of building `k` (0-based).
    pub fn observe(&self, cfg: &MicrogridConfig, timeline: &Timeline, k: usize) -> Observation {
        let phys = cfg.physics();
        let spec = &cfg.buildings[k];
        let (n_m, n_c) = classify_evs(self.parked_at(k + 1).map(|(_, e)| e), &phys);
        let wind = timeline.wind_at(k, self.stage);
        let soc = self.soc[k];
        let event = event_of(elastic_ratios(n_m, n_c, spec.piles, soc, wind, spec.wind_capacity_kw));
        let candidates = self
            .parked_at(k + 1)
            .filter(|(_, e)| is_chargeable(e, &phys))
            .map(|(i, e)| Candidate::new(i, e, &phys))
            .collect();
        Observation { n_m, n_c, wind_kw: wind, load_kw: spec.load_kw[self.stage % cfg.stages], soc, event, candidates }
    }

    /// Applies one stage: `charged[k]` lists the EV ids charging at building `k`.
    pub fn step(
        &mut self,
        cfg: &MicrogridConfig,
        timeline: &Timeline,
        charged: &[Vec<usize>],
    ) -> Result<StageOutcome, SimError> {
        let phys = cfg.physics();
        let price = cfg.price_at(self.stage);
        let mut charging = vec![false; self.evs.len()];
        let mut buildings = Vec::with_capacity(cfg.building_count());
        for (k, ids) in charged.iter().enumerate() {
            for &i in ids {
                if self.evs[i].location != k + 1 {
                    return Err(SimError::ChargeOnRoad);
                }
                charging[i] = true;
            }
            let r = timeline.wind_at(k, self.stage);
            let l = cfg.buildings[k].load_kw[self.stage % cfg.stages];
            let p = ids.len() as f64 * phys.charge_kw;
            let out = BuildingOutcome::settle(r, l, p, self.soc[k], price, &phys);
            self.soc[k] = out.soc_after;
            buildings.push(out);
        }
        let outcome = StageOutcome { stage: self.stage, buildings };

        for (i, ev) in self.evs.iter_mut().enumerate() {
            if !ev.is_parked() {
                continue;
            }
            let stays = ev.remaining_h - phys.dt > 1e-9;
            let next_loc = if stays { ev.location } else { 0 };
            if !stays {
                self.last_departure[i] = Some((self.stage + 1, ev.location));
            }
            *ev = ev_step(ev, charging[i], next_loc, None, &phys)?;
        }
        self.stage += 1;
        self.admit_arrivals(cfg, timeline);
        Ok(outcome)
    }
}
