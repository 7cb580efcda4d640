//! Sliding-window sample paths started from the true state at stage `t0`.
//!
//! Buildings only interact through the microgrid exchange bound, so every
//! path first draws the exogenous randomness (wind, arrivals and demands)
//! shared by all buildings and then replays each building on its own.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ev_step, BuildingOutcome, EvState, Physics, Timeline, World};
use crate::events::{classify_evs, elastic_ratios, event_of, is_chargeable, EventObservation};
use crate::policy::{charge_count, mllp_order, sample_index, Candidate, PolicyTable};
use crate::rng::{derive_seed, stream, Purpose};
use crate::scenario::{
    sample_charge_demand, sample_clock_stage, sample_trip_stages, sample_wind, Branching, CommuteSpec,
    MicrogridConfig, MobilitySpec, Segment,
};

/// A parked EV appearing inside the window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub offset: usize,
    pub slot: usize,
    pub parking_h: f64,
    pub energy_kwh: f64,
}

/// Exogenous inputs of one building over one window.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingInputs {
    pub k: usize,
    pub t0: usize,
    pub phys: Physics,
    pub piles: usize,
    pub wind_capacity_kw: f64,
    pub wind_kw: Vec<f64>,
    pub load_kw: Vec<f64>,
    pub price: Vec<f64>,
    /// Global EV id of each local slot, ascending.
    pub evs: Vec<usize>,
    pub initial: Vec<EvState>,
    pub arrivals: Vec<Arrival>,
    pub soc: f64,
}

impl BuildingInputs {
    pub fn window(&self) -> usize {
        self.wind_kw.len()
    }
}

/// State signature used to group paths that saw "the same" state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateSignature {
    pub bin: usize,
    pub n_m: usize,
    pub n_c: usize,
    pub soc_step: i64,
    pub wind_step: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub bin: usize,
    pub n_m: usize,
    pub n_c: usize,
    pub action: usize,
    pub charged: usize,
    pub cost_rmb: f64,
    pub exchange_kw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimObservation {
    pub n_m: usize,
    pub n_c: usize,
    pub event: EventObservation,
}

/// One building stepping through a window; cheap to clone for branching.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingSim {
    pub offset: usize,
    pub slots: Vec<EvState>,
    pub soc: f64,
    next_arrival: usize,
}

impl BuildingSim {
    pub fn new(inp: &BuildingInputs) -> Self {
        let mut s = BuildingSim { offset: 0, slots: inp.initial.clone(), soc: inp.soc, next_arrival: 0 };
        s.admit(inp);
        s
    }

    fn admit(&mut self, inp: &BuildingInputs) {
        while let Some(a) = inp.arrivals.get(self.next_arrival) {
            if a.offset > self.offset {
                break;
            }
            if a.offset == self.offset {
                self.slots[a.slot] = EvState::parked(a.parking_h, a.energy_kwh, inp.k + 1);
            }
            self.next_arrival += 1;
        }
    }

    pub fn observe(&self, inp: &BuildingInputs) -> SimObservation {
        let (n_m, n_c) = classify_evs(&self.slots, &inp.phys);
        let wind = inp.wind_kw[self.offset];
        let event = event_of(elastic_ratios(n_m, n_c, inp.piles, self.soc, wind, inp.wind_capacity_kw));
        SimObservation { n_m, n_c, event }
    }

    pub fn signature(&self, inp: &BuildingInputs, obs: &SimObservation) -> StateSignature {
        StateSignature {
            bin: obs.event.bin,
            n_m: obs.n_m,
            n_c: obs.n_c,
            soc_step: (self.soc / 0.05).round() as i64,
            wind_step: (inp.wind_kw[self.offset] / 10.0).round() as i64,
        }
    }

    /// Stage cost and exchange for a ratio, without moving the state.
    pub fn settle(&self, inp: &BuildingInputs, obs: &SimObservation, alpha: f64) -> BuildingOutcome {
        let count = charge_count(obs.n_m, obs.n_c, alpha);
        let o = self.offset;
        BuildingOutcome::settle(
            inp.wind_kw[o],
            inp.load_kw[o],
            count as f64 * inp.phys.charge_kw,
            self.soc,
            inp.price[o],
            &inp.phys,
        )
    }

    pub fn step(&mut self, inp: &BuildingInputs, obs: &SimObservation, action: usize, alpha: f64) -> StageRecord {
        let phys = &inp.phys;
        let count = charge_count(obs.n_m, obs.n_c, alpha);
        let mut cands: Vec<Candidate> = self
            .slots
            .iter()
            .enumerate()
            .filter(|(_, e)| is_chargeable(e, phys))
            .map(|(i, e)| Candidate::new(i, e, phys))
            .collect();
        let mut charging = vec![false; self.slots.len()];
        if count > 0 {
            if count < cands.len() {
                cands.select_nth_unstable_by(count - 1, mllp_order);
            }
            for c in &cands[..count] {
                charging[c.id] = true;
            }
        }
        let out = self.settle(inp, obs, alpha);
        self.soc = out.soc_after;
        for (i, ev) in self.slots.iter_mut().enumerate() {
            if ev.is_parked() {
                let stays = ev.remaining_h - phys.dt > 1e-9;
                *ev = ev_step(ev, charging[i], if stays { ev.location } else { 0 }, None, phys)
                    .expect("only parked EVs charge");
            }
        }
        self.offset += 1;
        self.admit(inp);
        StageRecord {
            bin: obs.event.bin,
            n_m: obs.n_m,
            n_c: obs.n_c,
            action,
            charged: count,
            cost_rmb: out.cost_rmb,
            exchange_kw: out.exchange_kw,
        }
    }
}

// ── Exogenous draws ──────────────────────────────────────────────────────────

/// Start of the window: the true state plus what the scheduler can look up.
#[derive(Debug, Clone, Copy)]
pub struct RolloutContext<'a> {
    pub cfg: &'a MicrogridConfig,
    pub timeline: &'a Timeline,
    pub world: &'a World,
}

impl RolloutContext<'_> {
    pub fn t0(&self) -> usize {
        self.world.stage
    }
}

fn next_departure(arrival: usize, clock: i64, stages: usize, wrap: bool) -> usize {
    let day = (arrival / stages) as i64;
    let mut cand = day * stages as i64 + clock;
    if cand < arrival as i64 + 1 {
        if wrap {
            cand += stages as i64;
        }
        cand = cand.max(arrival as i64 + 1);
    }
    cand as usize
}

/// Future stays of one commuter, drawn conditionally on what is known at
/// `t0`: a parked EV keeps its announced departure; the rest is sampled.
fn sample_commute_stays<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &MicrogridConfig,
    commute: &CommuteSpec,
    world: &World,
    ev: usize,
    end: usize,
) -> Vec<Segment> {
    let Some(home) = commute.home_of(ev) else { return Vec::new() };
    let phys = cfg.physics();
    let (dt, t0, stages) = (cfg.dt_hours, world.stage, cfg.stages);
    let state = world.evs[ev];
    let (mut leave, mut from, mut earliest) = if state.is_parked() {
        let left = t0 + (state.remaining_h / dt).round() as usize;
        (left, state.location, left + 1)
    } else {
        match world.last_departure[ev] {
            Some((left, b)) => (left, b, t0 + 1),
            None => return Vec::new(),
        }
    };
    let mut out = Vec::new();
    loop {
        let trip = sample_trip_stages(rng, home, dt);
        let arrival = (leave + trip).max(earliest);
        if arrival >= end {
            break;
        }
        let to = if from == home.building { commute.office_building } else { home.building };
        let departure = if to == commute.office_building {
            let clock = sample_clock_stage(rng, commute.office_departure_mean_h, commute.office_departure_std_h, dt);
            next_departure(arrival, clock, stages, false)
        } else {
            let clock = sample_clock_stage(rng, commute.home_departure_mean_h, commute.home_departure_std_h, dt)
                .clamp(1, stages as i64 - 1);
            next_departure(arrival, clock, stages, true)
        };
        let parking = departure - arrival;
        let energy = sample_charge_demand(rng, &cfg.ev.demand, parking as f64 * dt, &phys);
        out.push(Segment { arrival_stage: arrival, building: to, parking_stages: parking, energy_kwh: energy });
        leave = departure;
        from = to;
        earliest = departure + 1;
    }
    out
}

/// Draws one path's exogenous inputs for every building.
pub fn sample_inputs(ctx: &RolloutContext, seed: u64, path: usize, iteration: usize) -> Vec<BuildingInputs> {
    let cfg = ctx.cfg;
    let world = ctx.world;
    let t0 = world.stage;
    let tw = cfg.window;
    let end = t0 + tw;
    let key = |extra: u64| [t0 as u64, iteration as u64, path as u64, extra];
    let phys = cfg.physics();
    let n_ev = world.evs.len();

    let stays: Vec<Vec<Segment>> = (0..n_ev)
        .map(|i| match &cfg.mobility {
            MobilitySpec::Fixed(_) => ctx.timeline.segments[i][world.next_segment[i]..]
                .iter()
                .take_while(|s| s.arrival_stage < end)
                .cloned()
                .collect(),
            MobilitySpec::Commute(c) => {
                let mut rng = stream(seed, Purpose::RolloutMobility, &key(i as u64));
                sample_commute_stays(&mut rng, cfg, c, world, i, end)
            }
        })
        .collect();

    (0..cfg.building_count())
        .map(|k| {
            let b = &cfg.buildings[k];
            let mut rng = stream(seed, Purpose::RolloutWind, &key(k as u64));
            let wind_kw = (0..tw)
                .map(|o| {
                    if o == 0 {
                        ctx.timeline.wind_at(k, t0)
                    } else {
                        let t = (t0 + o) % cfg.stages;
                        sample_wind(&mut rng, b.wind_forecast_kw[t], cfg.wind_rel_std, b.wind_capacity_kw)
                    }
                })
                .collect();
            let evs: Vec<usize> = (0..n_ev)
                .filter(|&i| world.evs[i].location == k + 1 || stays[i].iter().any(|s| s.building == k + 1))
                .collect();
            let initial = evs
                .iter()
                .map(|&i| if world.evs[i].location == k + 1 { world.evs[i] } else { EvState::ON_ROAD })
                .collect();
            let mut arrivals: Vec<Arrival> = evs
                .iter()
                .enumerate()
                .flat_map(|(slot, &i)| {
                    stays[i].iter().filter(|s| s.building == k + 1).map(move |s| Arrival {
                        offset: s.arrival_stage - t0,
                        slot,
                        parking_h: s.parking_hours(phys.dt),
                        energy_kwh: s.energy_kwh,
                    })
                })
                .collect();
            arrivals.sort_by_key(|a| (a.offset, a.slot));
            BuildingInputs {
                k,
                t0,
                phys,
                piles: b.piles,
                wind_capacity_kw: b.wind_capacity_kw,
                wind_kw,
                load_kw: (0..tw).map(|o| b.load_kw[(t0 + o) % cfg.stages]).collect(),
                price: (0..tw).map(|o| cfg.price_at(t0 + o)).collect(),
                evs,
                initial,
                arrivals,
                soc: world.soc[k],
            }
        })
        .collect()
}

// ── Paths ────────────────────────────────────────────────────────────────────

/// One replay of a building from `t0` with a given first action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub t0_action: usize,
    pub stages: Vec<StageRecord>,
}

impl Branch {
    /// Building cost after the first stage.
    pub fn tail_cost(&self) -> f64 {
        self.stages.iter().skip(1).map(|s| s.cost_rmb).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBuilding {
    pub signature: StateSignature,
    /// Exact first-stage cost and exchange under every action.
    pub t0_cost: Vec<f64>,
    pub t0_exchange: Vec<f64>,
    pub branches: Vec<Branch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub index: usize,
    pub seed: u64,
    pub buildings: Vec<PathBuilding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub t0: usize,
    pub branching: Branching,
    pub paths: Vec<SamplePath>,
}

/// Plays one branch to the end of the window. Actions after the first come
/// from the table, driven by the shared uniforms `u`.
pub fn play_branch(
    table: &PolicyTable,
    inp: &BuildingInputs,
    first_action: usize,
    u: &[f64],
) -> Branch {
    let mut sim = BuildingSim::new(inp);
    let mut stages = Vec::with_capacity(inp.window());
    for o in 0..inp.window() {
        let obs = sim.observe(inp);
        let m = if o == 0 { first_action } else { sample_index(table.cell(inp.k, inp.t0 + o, obs.event.bin), u[o]) };
        let alpha = table.actions()[m];
        stages.push(sim.step(inp, &obs, m, alpha));
    }
    Branch { t0_action: first_action, stages }
}

fn play_path(table: &PolicyTable, ctx: &RolloutContext, seed: u64, path: usize, branching: Branching, iteration: usize) -> SamplePath {
    let t0 = ctx.t0();
    let inputs = sample_inputs(ctx, seed, path, iteration);
    let buildings = inputs
        .iter()
        .map(|inp| {
            let mut rng = stream(seed, Purpose::RolloutAction, &[t0 as u64, iteration as u64, path as u64, inp.k as u64]);
            let u: Vec<f64> = (0..inp.window()).map(|_| rng.random::<f64>()).collect();
            let sim = BuildingSim::new(inp);
            let obs = sim.observe(inp);
            let (t0_cost, t0_exchange): (Vec<f64>, Vec<f64>) = table
                .actions()
                .iter()
                .map(|&a| {
                    let o = sim.settle(inp, &obs, a);
                    (o.cost_rmb, o.exchange_kw)
                })
                .unzip();
            let branches = match branching {
                Branching::AllActions => (0..table.action_count()).map(|m| play_branch(table, inp, m, &u)).collect(),
                Branching::Sampled => {
                    let m = sample_index(table.cell(inp.k, t0, obs.event.bin), u[0]);
                    vec![play_branch(table, inp, m, &u)]
                }
            };
            PathBuilding { signature: sim.signature(inp, &obs), t0_cost, t0_exchange, branches }
        })
        .collect();
    SamplePath { index: path, seed: derive_seed(seed, Purpose::RolloutBatch, &[t0 as u64, iteration as u64, path as u64]), buildings }
}

/// Generates `paths` sample paths in parallel; the result does not depend
/// on the number of worker threads.
pub fn rollout(
    table: &PolicyTable,
    ctx: &RolloutContext,
    paths: usize,
    seed: u64,
    branching: Branching,
    iteration: usize,
) -> RolloutBatch {
    let paths = (0..paths)
        .into_par_iter()
        .map(|l| play_path(table, ctx, seed, l, branching, iteration))
        .collect();
    RolloutBatch { t0: ctx.t0(), branching, paths }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{presets, Scenario};

    #[test]
    fn departure_rules() {
        // Office: a late arrival stays at least one stage.
        assert_eq!(next_departure(40, 34, 48, false), 41);
        assert_eq!(next_departure(20, 34, 48, false), 34);
        // Home: an evening arrival leaves the next morning.
        assert_eq!(next_departure(38, 14, 48, true), 62);
        assert_eq!(next_departure(50, 14, 48, true), 62);
    }

    #[test]
    fn single_action_path_matches_world() {
        let mut cfg = presets::tiny();
        cfg.optimizer.actions = vec![1.0];
        cfg.window = 6;
        let scen = Scenario::generate(&cfg, 0);
        let tl = Timeline::new(&cfg, &scen, 1);
        let world = World::start(&cfg, &tl);
        let table = PolicyTable::uniform(1, cfg.stages, vec![1.0], 1e-6);
        let ctx = RolloutContext { cfg: &cfg, timeline: &tl, world: &world };
        let batch = rollout(&table, &ctx, 1, 9, Branching::AllActions, 0);
        let path_cost: f64 = batch.paths[0].buildings[0].branches[0].stages.iter().map(|s| s.cost_rmb).sum();

        let mut w = world.clone();
        let mut direct = 0.0;
        for _ in 0..cfg.window {
            let obs = w.observe(&cfg, &tl, 0);
            let mut cands = obs.candidates.clone();
            let ids = crate::policy::mllp_select(&mut cands, obs.n_c).unwrap();
            direct += w.step(&cfg, &tl, &[ids]).unwrap().total_cost();
        }
        assert!((path_cost - direct).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_batch() {
        let cfg = presets::tiny();
        let scen = Scenario::generate(&cfg, 0);
        let tl = Timeline::new(&cfg, &scen, 1);
        let world = World::start(&cfg, &tl);
        let table = PolicyTable::uniform(1, cfg.stages, cfg.optimizer.actions.clone(), 1e-6);
        let ctx = RolloutContext { cfg: &cfg, timeline: &tl, world: &world };
        let a = rollout(&table, &ctx, 50, 3, Branching::Sampled, 0);
        let b = rollout(&table, &ctx, 50, 3, Branching::Sampled, 0);
        assert_eq!(a.paths.len(), 50);
        assert_eq!(a, b);
    }
}
