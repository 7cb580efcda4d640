//! Physical state transitions and stage cost: EV energy and parking time,
//! hydrogen storage (HES) dispatch and state of charge, building exchange.
//!
//! Power quantities are kW, energies kWh, time in hours. Every power that
//! changes a stored energy is multiplied by the stage length `dt`.

mod world;

pub use world::{Observation, Timeline, World};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::scenario::{ExchangeBounds, MicrogridConfig};

/// Energies below this are treated as exactly zero.
pub const SNAP: f64 = 1e-9;

/// Physical constants of EVs and the per-building HES.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Physics {
    pub dt: f64,
    pub charge_kw: f64,
    pub charge_eff: f64,
    pub battery_kwh: f64,
    pub hes_capacity_kwh: f64,
    pub hes_charge_eff: f64,
    pub hes_discharge_eff: f64,
    pub hes_power_kw: f64,
}

impl Physics {
    /// Energy one EV gains from one stage at a pile.
    pub fn energy_per_stage(&self) -> f64 {
        self.charge_kw * self.dt * self.charge_eff
    }

    /// Hours of charging needed to deliver `energy_kwh`.
    pub fn processing_hours(&self, energy_kwh: f64) -> f64 {
        energy_kwh / (self.charge_kw * self.charge_eff)
    }

    pub fn laxity(&self, ev: &EvState) -> f64 {
        ev.remaining_h - self.processing_hours(ev.energy_kwh)
    }
}

// ── EV ───────────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvState {
    pub remaining_h: f64,
    pub energy_kwh: f64,
    /// 0 on the road, otherwise the 1-based building.
    pub location: usize,
}

impl EvState {
    pub const ON_ROAD: EvState = EvState { remaining_h: 0.0, energy_kwh: 0.0, location: 0 };

    pub fn parked(remaining_h: f64, energy_kwh: f64, building: usize) -> Self {
        EvState { remaining_h, energy_kwh, location: building }
    }

    pub fn is_parked(&self) -> bool {
        self.location != 0
    }
}

/// One stage of EV dynamics.
///
/// A new arrival overrides everything; otherwise a move to the road clears
/// the state and a stay burns one stage of parking time and, if charged, one
/// stage of delivered energy.
pub fn ev_step(
    ev: &EvState,
    charged: bool,
    next_loc: usize,
    arrival: Option<(f64, f64)>,
    phys: &Physics,
) -> Result<EvState, SimError> {
    if charged && !ev.is_parked() {
        return Err(SimError::ChargeOnRoad);
    }
    if let Some((tau, eta)) = arrival {
        return Ok(EvState { remaining_h: tau, energy_kwh: eta, location: next_loc });
    }
    if next_loc == 0 {
        return Ok(EvState::ON_ROAD);
    }
    let mut energy = ev.energy_kwh;
    if charged {
        energy = (energy - phys.energy_per_stage()).max(0.0);
    }
    if energy < SNAP {
        energy = 0.0;
    }
    let mut remaining = ev.remaining_h - phys.dt;
    if remaining < SNAP {
        remaining = 0.0;
    }
    Ok(EvState { remaining_h: remaining, energy_kwh: energy, location: next_loc })
}

/// Draws the next location from a row over buildings `1..=K` followed by the
/// road; the last entry maps to location 0.
pub fn sample_location<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> Result<usize, SimError> {
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || row.iter().any(|p| !(*p >= 0.0)) {
        return Err(SimError::NotStochastic { sum });
    }
    let u: f64 = rng.random::<f64>() * sum;
    let k = row.len() - 1;
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if u < acc && *p > 0.0 {
            return Ok(if i == k { 0 } else { i + 1 });
        }
    }
    // Rounding left u at the very top; take the last entry with mass.
    let i = row.iter().rposition(|p| *p > 0.0).expect("row has mass");
    Ok(if i == k { 0 } else { i + 1 })
}

// ── HES ──────────────────────────────────────────────────────────────────────

/// Largest discharge and charge power the store can sustain for one stage.
pub fn hes_bounds(b: f64, phys: &Physics) -> (f64, f64) {
    let kappa = phys.hes_capacity_kwh;
    let dc = (b * kappa * phys.hes_discharge_eff / phys.dt).min(phys.hes_power_kw);
    let c = ((1.0 - b) * kappa / (phys.hes_charge_eff * phys.dt)).min(phys.hes_power_kw);
    (dc.max(0.0), c.max(0.0))
}

/// Storage power: discharge (+) to cover a deficit, charge (−) from a surplus.
pub fn hes_dispatch(r: f64, l: f64, p: f64, b: f64, phys: &Physics) -> f64 {
    let (dc_max, c_max) = hes_bounds(b, phys);
    let net = l + p - r;
    if net <= 0.0 {
        -(-net).min(c_max)
    } else {
        net.min(dc_max)
    }
}

pub fn hes_step(b: f64, h: f64, phys: &Physics) -> f64 {
    let kappa = phys.hes_capacity_kwh;
    let next = if h >= 0.0 {
        (b - h * phys.dt / (phys.hes_discharge_eff * kappa)).max(0.0)
    } else {
        (b - h * phys.dt * phys.hes_charge_eff / kappa).min(1.0)
    };
    next.clamp(0.0, 1.0)
}

// ── Exchange and cost ────────────────────────────────────────────────────────

/// Grid exchange closing the building balance, + import / − export.
pub fn exchange_power(r: f64, l: f64, p: f64, h: f64) -> f64 {
    l + p - r - h
}

/// Exchange written directly from the storage bounds, without dispatching.
pub fn exchange_power_max_form(r: f64, l: f64, p: f64, b: f64, phys: &Physics) -> f64 {
    let (dc_max, c_max) = hes_bounds(b, phys);
    (l + p - r - dc_max).max(0.0) - (r - l - p - c_max).max(0.0)
}

/// Stage cost in RMB; negative when the building sells its surplus.
pub fn one_step_cost(r: f64, l: f64, p: f64, b: f64, price: f64, phys: &Physics) -> f64 {
    let (dc_max, c_max) = hes_bounds(b, phys);
    if p <= r - l - c_max {
        price * phys.dt * (l + p + c_max - r)
    } else if p >= r - l + dc_max {
        price * phys.dt * (l + p - dc_max - r)
    } else {
        0.0
    }
}

/// Everything one building does in one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildingOutcome {
    pub wind_kw: f64,
    pub load_kw: f64,
    pub charge_kw: f64,
    pub hes_kw: f64,
    pub exchange_kw: f64,
    pub soc_before: f64,
    pub soc_after: f64,
    pub cost_rmb: f64,
}

impl BuildingOutcome {
    /// Dispatches storage and settles the exchange for a charging power `p`.
    pub fn settle(r: f64, l: f64, p: f64, b: f64, price: f64, phys: &Physics) -> Self {
        let h = hes_dispatch(r, l, p, b, phys);
        let g = exchange_power(r, l, p, h);
        BuildingOutcome {
            wind_kw: r,
            load_kw: l,
            charge_kw: p,
            hes_kw: h,
            exchange_kw: g,
            soc_before: b,
            soc_after: hes_step(b, h, phys),
            cost_rmb: one_step_cost(r, l, p, b, price, phys),
        }
    }

    pub fn balance_residual(&self) -> f64 {
        self.wind_kw + self.hes_kw + self.exchange_kw - self.load_kw - self.charge_kw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: usize,
    pub buildings: Vec<BuildingOutcome>,
}

impl StageOutcome {
    pub fn total_exchange(&self) -> f64 {
        self.buildings.iter().map(|b| b.exchange_kw).sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.buildings.iter().map(|b| b.cost_rmb).sum()
    }
}

// ── Feasibility ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    /// Microgrid exchange outside its bounds; `excess` is signed like the exchange.
    TotalExchange { exchange_kw: f64, excess_kw: f64 },
    BuildingExchange { building: usize, exchange_kw: f64, excess_kw: f64 },
    EnergyRange { ev: usize, energy_kwh: f64 },
    Undeliverable { ev: usize, energy_kwh: f64, deliverable_kwh: f64 },
    Balance { building: usize, residual_kw: f64 },
}

/// Lists every constraint the stage breaks. Never fails.
pub fn check_feasibility(outcome: &StageOutcome, evs: &[EvState], cfg: &MicrogridConfig) -> Vec<Violation> {
    let phys = cfg.physics();
    let mut out = Vec::new();
    let total = outcome.total_exchange();
    let excess = cfg.grid.violation(total);
    if excess != 0.0 {
        out.push(Violation::TotalExchange { exchange_kw: total, excess_kw: excess });
    }
    for (k, b) in outcome.buildings.iter().enumerate() {
        let bounds: ExchangeBounds = cfg.buildings.get(k).map(|s| s.exchange).unwrap_or(ExchangeBounds::unbounded());
        let e = bounds.violation(b.exchange_kw);
        if e != 0.0 {
            out.push(Violation::BuildingExchange { building: k + 1, exchange_kw: b.exchange_kw, excess_kw: e });
        }
        let res = b.balance_residual();
        if res.abs() > 1e-9 {
            out.push(Violation::Balance { building: k + 1, residual_kw: res });
        }
    }
    for (i, ev) in evs.iter().enumerate() {
        if !(0.0..=phys.battery_kwh).contains(&ev.energy_kwh) {
            out.push(Violation::EnergyRange { ev: i, energy_kwh: ev.energy_kwh });
        }
        let deliverable = phys.charge_kw * phys.charge_eff * ev.remaining_h;
        if ev.is_parked() && ev.energy_kwh > deliverable + 1e-9 {
            out.push(Violation::Undeliverable { ev: i, energy_kwh: ev.energy_kwh, deliverable_kwh: deliverable });
        }
    }
    out
}

#[cfg(test)]
pub(crate) fn table_physics() -> Physics {
    Physics {
        dt: 0.5,
        charge_kw: 3.6,
        charge_eff: 0.92,
        battery_kwh: 36.0,
        hes_capacity_kwh: 166.65,
        hes_charge_eff: 0.82,
        hes_discharge_eff: 0.62,
        hes_power_kw: 50.0,
    }
}
