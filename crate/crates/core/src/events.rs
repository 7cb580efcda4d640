//! Elastic ratios and the discrete event each building reports to the policy.

use serde::{Deserialize, Serialize};

use crate::dynamics::{EvState, Physics};

pub const BIN_COUNT: usize = 10;

/// Must-charge and chargeable counts among the EVs parked at one building.
///
/// An EV is chargeable when it still needs energy and stays at least one
/// more stage; it must charge when skipping this stage would leave too
/// little time to finish.
pub fn classify_evs<'a>(parked: impl IntoIterator<Item = &'a EvState>, phys: &Physics) -> (usize, usize) {
    let (mut n_m, mut n_c) = (0, 0);
    for ev in parked {
        if is_chargeable(ev, phys) {
            n_c += 1;
            if is_must_charge(ev, phys) {
                n_m += 1;
            }
        }
    }
    (n_m, n_c)
}

pub fn is_chargeable(ev: &EvState, phys: &Physics) -> bool {
    ev.is_parked() && ev.energy_kwh > 0.0 && ev.remaining_h >= phys.dt - 1e-9
}

pub fn is_must_charge(ev: &EvState, phys: &Physics) -> bool {
    phys.laxity(ev) < phys.dt - 1e-9
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticRatios {
    pub ev: f64,
    pub hes: f64,
    pub dre: f64,
}

/// Deferrable share of the piles, storage SOC and wind generation level.
pub fn elastic_ratios(n_m: usize, n_c: usize, piles: usize, soc: f64, wind_kw: f64, wind_capacity_kw: f64) -> ElasticRatios {
    let ev = if piles == 0 { 0.0 } else { (n_c - n_m) as f64 / piles as f64 };
    let dre = if wind_capacity_kw > 0.0 { (wind_kw / wind_capacity_kw).min(1.0) } else { 0.0 };
    ElasticRatios { ev: ev.clamp(0.0, 1.0), hes: soc.clamp(0.0, 1.0), dre: dre.max(0.0) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventObservation {
    pub value: f64,
    pub bin: usize,
    pub components: ElasticRatios,
}

pub fn bin_of(value: f64) -> usize {
    ((value * BIN_COUNT as f64).floor().max(0.0) as usize).min(BIN_COUNT - 1)
}

pub fn event_of(r: ElasticRatios) -> EventObservation {
    let value = (r.ev + r.hes + r.dre) / 3.0;
    EventObservation { value, bin: bin_of(value), components: r }
}
