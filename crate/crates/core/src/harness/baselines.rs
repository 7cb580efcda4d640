//! Perfect-information references: an exhaustive search for tiny instances
//! and a greedy cheapest-stage planner for full-size ones.

use std::collections::HashSet;

use crate::dynamics::{Observation, Timeline, World};
use crate::error::SimError;
use crate::events::is_must_charge;
use crate::policy::mllp_select;
use crate::scenario::MicrogridConfig;

/// Leaf budget of the exhaustive search.
pub const ORACLE_BUDGET: usize = 100_000;

// ── Exhaustive search ────────────────────────────────────────────────────────

/// Per-stage charging counts of the cheapest feasible schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSchedule {
    pub counts: Vec<Vec<usize>>,
    pub cost_rmb: f64,
    pub leaves: usize,
}

struct Search<'a> {
    cfg: &'a MicrogridConfig,
    timeline: &'a Timeline,
    horizon: usize,
    budget: usize,
    leaves: usize,
    best: Option<(f64, Vec<Vec<usize>>)>,
    path: Vec<Vec<usize>>,
}

impl Search<'_> {
    fn visit(&mut self, world: &World, cost: f64) -> Result<(), SimError> {
        if world.stage >= self.horizon {
            self.leaves += 1;
            if self.leaves > self.budget {
                return Err(SimError::BudgetExceeded { budget: self.budget });
            }
            if self.best.as_ref().is_none_or(|(c, _)| cost < *c - 1e-12) {
                self.best = Some((cost, self.path.clone()));
            }
            return Ok(());
        }
        let obs: Vec<Observation> =
            (0..self.cfg.building_count()).map(|k| world.observe(self.cfg, self.timeline, k)).collect();
        let ranges: Vec<Vec<usize>> = obs.iter().map(|o| (o.n_m..=o.n_c).collect()).collect();
        // A single stage wider than what is left of the budget cannot finish.
        let width = ranges.iter().fold(1usize, |acc, r| acc.saturating_mul(r.len()));
        if width > self.budget - self.leaves {
            return Err(SimError::BudgetExceeded { budget: self.budget });
        }
        for counts in cartesian(&ranges) {
            let mut next = world.clone();
            let charged = select_counts(&obs, &counts)?;
            let out = next.step(self.cfg, self.timeline, &charged)?;
            if !self.cfg.grid.contains(out.total_exchange()) {
                continue;
            }
            self.path.push(counts);
            self.visit(&next, cost + out.total_cost())?;
            self.path.pop();
        }
        Ok(())
    }
}

fn cartesian(ranges: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for r in ranges {
        out = out.into_iter().flat_map(|p| r.iter().map(move |&x| [p.clone(), vec![x]].concat())).collect();
    }
    out
}

fn select_counts(obs: &[Observation], counts: &[usize]) -> Result<Vec<Vec<usize>>, SimError> {
    obs.iter().zip(counts).map(|(o, &n)| mllp_select(&mut o.candidates.clone(), n)).collect()
}

/// Cheapest schedule over the first `horizon` stages, charging EVs in
/// mLLLP order and skipping every stage that breaks the exchange bound.
pub fn exhaustive_schedule(
    cfg: &MicrogridConfig,
    timeline: &Timeline,
    horizon: usize,
    budget: usize,
) -> Result<OracleSchedule, SimError> {
    let mut s = Search { cfg, timeline, horizon, budget, leaves: 0, best: None, path: Vec::new() };
    s.visit(&World::start(cfg, timeline), 0.0)?;
    let leaves = s.leaves;
    let (cost_rmb, counts) = s.best.ok_or(SimError::NoFeasibleSchedule)?;
    Ok(OracleSchedule { counts, cost_rmb, leaves })
}

// ── Greedy planner ───────────────────────────────────────────────────────────

/// Planned (EV, absolute stage) charging slots.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ChargePlan {
    slots: HashSet<(usize, usize)>,
}

impl ChargePlan {
    pub fn contains(&self, ev: usize, stage: usize) -> bool {
        self.slots.contains(&(ev, stage))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Earliest-deadline-first over every stay: each stay takes the stages it
/// needs among its cheapest ones, breaking price ties toward the lowest
/// planned exchange and avoiding stages already at the import bound or at
/// the pile count.
pub fn greedy_plan(cfg: &MicrogridConfig, timeline: &Timeline, horizon: usize) -> ChargePlan {
    let phys = cfg.physics();
    let per_stage = phys.energy_per_stage();
    let span = timeline.segments.iter().flatten().map(|s| s.departure_stage()).max().unwrap_or(0).max(horizon);
    let mut exchange: Vec<f64> = (0..span)
        .map(|t| {
            (0..cfg.building_count())
                .map(|k| cfg.buildings[k].load_kw[t % cfg.stages] - timeline.wind_at(k, t))
                .sum()
        })
        .collect();
    let mut used = vec![vec![0usize; span]; cfg.building_count()];

    let mut stays: Vec<(usize, usize, usize)> = Vec::new();
    for (ev, segs) in timeline.segments.iter().enumerate() {
        for (i, s) in segs.iter().enumerate() {
            if s.arrival_stage < horizon && s.energy_kwh > 0.0 {
                stays.push((s.departure_stage(), ev, i));
            }
        }
    }
    stays.sort_unstable();

    let mut plan = ChargePlan::default();
    for (_, ev, i) in stays {
        let s = &timeline.segments[ev][i];
        let k = s.building - 1;
        let need = ((s.energy_kwh / per_stage) - 1e-9).ceil().max(0.0) as usize;
        let mut options: Vec<usize> = (s.arrival_stage..s.departure_stage()).collect();
        let blocked = |t: usize| {
            exchange[t] + phys.charge_kw > cfg.grid.max_kw || used[k][t] >= cfg.buildings[k].piles
        };
        options.sort_by(|&a, &b| {
            blocked(a)
                .cmp(&blocked(b))
                .then(cfg.price_at(a).total_cmp(&cfg.price_at(b)))
                .then(exchange[a].total_cmp(&exchange[b]))
                .then(a.cmp(&b))
        });
        for &t in options.iter().take(need) {
            exchange[t] += phys.charge_kw;
            used[k][t] += 1;
            plan.slots.insert((ev, t));
        }
    }
    plan
}

/// Planned EVs that are still chargeable, plus every must-charge EV.
pub fn planned_selection(plan: &ChargePlan, world: &World, cfg: &MicrogridConfig, obs: &Observation) -> Vec<usize> {
    let phys = cfg.physics();
    let mut ids: Vec<usize> = obs
        .candidates
        .iter()
        .map(|c| c.id)
        .filter(|&id| plan.contains(id, world.stage) || is_must_charge(&world.evs[id], &phys))
        .collect();
    ids.sort_unstable();
    ids
}
