//! Gradient iterations for one decision stage, with the exchange-bound
//! adjustment and a final check of the action that will actually be applied.

use serde::{Deserialize, Serialize};

use super::adjust::{allocate_adjustment, BuildingSlack, Direction};
use super::projection::project_weights;
use crate::dynamics::{BuildingOutcome, Observation, Timeline, World};
use crate::gradient::{exchange_violation, expected_exchange, policy_gradient, rollout, GradientEstimate, RolloutContext};
use crate::policy::{charge_count, greedy_index, PolicyTable};
use crate::scenario::{Branching, MicrogridConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub seed: u64,
    pub paths: usize,
    pub max_iter: usize,
    pub epsilon: f64,
    pub step_decay: f64,
    pub branching: Branching,
}

impl OptimizeOptions {
    pub fn from_config(cfg: &MicrogridConfig, seed: u64) -> Self {
        let o = &cfg.optimizer;
        OptimizeOptions {
            seed,
            paths: o.paths,
            max_iter: o.max_iter,
            epsilon: o.epsilon,
            step_decay: o.step_decay,
            branching: o.branching,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Norm,
    Stall,
    MaxIter,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Norm => "norm",
            StopReason::Stall => "stall",
            StopReason::MaxIter => "max-iter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub stage: usize,
    pub iteration: usize,
    pub step: f64,
    pub grad_norms: Vec<f64>,
    pub projected_norm: f64,
    pub expected_exchange_kw: f64,
    pub violation_kw: f64,
    pub adjusted: bool,
    pub missing_values: usize,
    pub stop: Option<StopReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub logs: Vec<IterationLog>,
    pub iterations: usize,
    pub stop: StopReason,
    pub estimates: Vec<GradientEstimate>,
    /// Exchange of the greedy actions after any repair.
    pub greedy_exchange_kw: f64,
    /// Greedy actions had to be moved to respect the exchange bound.
    pub repaired: bool,
    /// Even the most conservative actions break the exchange bound.
    pub infeasible: bool,
    /// The adjustment could not place the whole correction.
    pub shortfall: bool,
}

/// Step size of iteration `j`.
pub fn step_size(j: usize, decay: f64) -> f64 {
    1.0 / (1.0 + decay * j as f64)
}

/// `w <- clip(w - step * d, floor, 1)` on every observed cell.
pub fn gradient_step(table: &mut PolicyTable, t0: usize, estimates: &[GradientEstimate], step: f64) {
    let floor = table.weight_floor();
    for e in estimates.iter().filter(|e| e.event_frequency > 0.0) {
        for (w, d) in table.cell_mut(e.k, t0, e.bin).iter_mut().zip(&e.d) {
            *w = (*w - step * d).clamp(floor, 1.0);
        }
    }
}

/// `w - clip(w - d)`: zero exactly at a box-constrained stationary point.
fn projected(table: &PolicyTable, t0: usize, e: &GradientEstimate) -> Vec<f64> {
    let floor = table.weight_floor();
    table.cell(e.k, t0, e.bin).iter().zip(&e.d).map(|(w, d)| w - (w - d).clamp(floor, 1.0)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Exact exchange at `t0` if every building applies ratio `alphas[k]`.
fn exchange_for(cfg: &MicrogridConfig, t0: usize, obs: &[Observation], alphas: &[f64]) -> f64 {
    let phys = cfg.physics();
    obs.iter()
        .zip(alphas)
        .map(|(o, &a)| {
            let p = charge_count(o.n_m, o.n_c, a) as f64 * phys.charge_kw;
            BuildingOutcome::settle(o.wind_kw, o.load_kw, p, o.soc, cfg.price_at(t0), &phys).exchange_kw
        })
        .sum()
}

/// Makes action `m` the greedy choice of a cell.
fn force_greedy(cell: &mut [f64], m: usize) {
    for (i, w) in cell.iter_mut().enumerate() {
        if i == m {
            *w = 1.0;
        } else {
            *w = w.min(1.0 - 1e-9);
        }
    }
}

/// Moves greedy actions until the applied exchange respects the bound.
/// Returns (exchange, repaired, infeasible).
fn repair_greedy(
    cfg: &MicrogridConfig,
    table: &mut PolicyTable,
    t0: usize,
    obs: &[Observation],
    norms: &[f64],
) -> (f64, bool, bool) {
    let actions = table.actions().to_vec();
    let last = actions.len() - 1;
    let mut repaired = false;
    for _ in 0..=obs.len() * actions.len() {
        let greedy: Vec<usize> = (0..obs.len()).map(|k| greedy_index(table.cell(k, t0, obs[k].event.bin))).collect();
        let alphas: Vec<f64> = greedy.iter().map(|&m| actions[m]).collect();
        let g = exchange_for(cfg, t0, obs, &alphas);
        let delta = exchange_violation(g, cfg.grid.min_kw, cfg.grid.max_kw);
        if delta == 0.0 {
            return (g, repaired, false);
        }
        repaired = true;
        let extreme = if delta > 0.0 { 0 } else { last };
        let g_ext = exchange_for(cfg, t0, obs, &vec![actions[extreme]; obs.len()]);
        if exchange_violation(g_ext, cfg.grid.min_kw, cfg.grid.max_kw) != 0.0 {
            for (k, o) in obs.iter().enumerate() {
                force_greedy(table.cell_mut(k, t0, o.event.bin), extreme);
            }
            return (g_ext, true, true);
        }
        let slack: Vec<BuildingSlack> = obs
            .iter()
            .zip(&alphas)
            .zip(norms)
            .map(|((o, &a), &n)| BuildingSlack { grad_norm: n, n_m: o.n_m, n_c: o.n_c, current_ratio: a })
            .collect();
        let Ok(alloc) = allocate_adjustment(delta, cfg.ev.charge_power_kw, &slack) else {
            return (g, true, true);
        };
        let mut moved = false;
        for t in &alloc.targets {
            let cur = greedy[t.k];
            let m = match t.direction {
                Direction::Reduce => {
                    let m = actions.iter().rposition(|a| *a <= t.target_ratio + 1e-12).unwrap_or(0);
                    if m >= cur && cur > 0 { cur - 1 } else { m.min(cur) }
                }
                Direction::Increase => {
                    let m = actions.iter().position(|a| *a >= t.target_ratio - 1e-12).unwrap_or(last);
                    if m <= cur && cur < last { cur + 1 } else { m.max(cur) }
                }
            };
            if m != cur {
                force_greedy(table.cell_mut(t.k, t0, obs[t.k].event.bin), m);
                moved = true;
            }
        }
        if !moved {
            return (g, true, true);
        }
    }
    let alphas: Vec<f64> =
        (0..obs.len()).map(|k| actions[greedy_index(table.cell(k, t0, obs[k].event.bin))]).collect();
    let g = exchange_for(cfg, t0, obs, &alphas);
    (g, repaired, exchange_violation(g, cfg.grid.min_kw, cfg.grid.max_kw) != 0.0)
}

/// Runs the gradient iterations for the stage the world is at and leaves
/// the improved cells in `table`.
pub fn optimize_stage(
    cfg: &MicrogridConfig,
    timeline: &Timeline,
    world: &World,
    table: &mut PolicyTable,
    opts: &OptimizeOptions,
) -> StageResult {
    let t0 = world.stage;
    let ctx = RolloutContext { cfg, timeline, world };
    let obs: Vec<Observation> = (0..cfg.building_count()).map(|k| world.observe(cfg, timeline, k)).collect();
    let mut batch = rollout(table, &ctx, opts.paths, opts.seed, opts.branching, 0);
    let mut logs = Vec::new();
    let mut prev_pg: Option<Vec<f64>> = None;
    let mut adjusting = true;
    let mut shortfall = false;
    let mut j = 0;
    let (stop, estimates) = loop {
        if opts.branching == Branching::Sampled && j > 0 {
            batch = rollout(table, &ctx, opts.paths, opts.seed, opts.branching, j);
        }
        let estimates: Vec<GradientEstimate> =
            obs.iter().enumerate().map(|(k, o)| policy_gradient(&batch, table, k, o.event.bin)).collect();
        let g = expected_exchange(&batch, table);
        let delta = exchange_violation(g, cfg.grid.min_kw, cfg.grid.max_kw);
        let pg: Vec<f64> = estimates.iter().flat_map(|e| projected(table, t0, e)).collect();
        let pg_norm = norm(&pg);
        let mut log = IterationLog {
            stage: t0,
            iteration: j,
            step: step_size(j, opts.step_decay),
            grad_norms: estimates.iter().map(|e| e.norm()).collect(),
            projected_norm: pg_norm,
            expected_exchange_kw: g,
            violation_kw: delta,
            adjusted: false,
            missing_values: estimates.iter().map(|e| e.missing).sum(),
            stop: None,
        };

        if delta != 0.0 && adjusting && j + 1 < opts.max_iter {
            let slack: Vec<BuildingSlack> = obs
                .iter()
                .enumerate()
                .map(|(k, o)| BuildingSlack {
                    grad_norm: log.grad_norms[k],
                    n_m: o.n_m,
                    n_c: o.n_c,
                    current_ratio: table.expected_ratio(k, t0, o.event.bin),
                })
                .collect();
            match allocate_adjustment(delta, cfg.ev.charge_power_kw, &slack) {
                Ok(alloc) => {
                    shortfall |= alloc.shortfall_evs > 1e-9;
                    for t in &alloc.targets {
                        let bin = obs[t.k].event.bin;
                        let p = project_weights(table.cell(t.k, t0, bin), table.actions(), t.target_ratio, table.weight_floor());
                        shortfall |= p.clamped;
                        table.cell_mut(t.k, t0, bin).copy_from_slice(&p.weights);
                    }
                    log.adjusted = true;
                }
                Err(_) => adjusting = false,
            }
            if log.adjusted {
                logs.push(log);
                prev_pg = Some(pg);
                j += 1;
                continue;
            }
        }

        let stop = if pg_norm <= opts.epsilon {
            Some(StopReason::Norm)
        } else if prev_pg.as_ref().is_some_and(|p| {
            norm(&p.iter().zip(&pg).map(|(a, b)| a - b).collect::<Vec<_>>()) <= opts.epsilon
        }) {
            Some(StopReason::Stall)
        } else if j + 1 >= opts.max_iter {
            Some(StopReason::MaxIter)
        } else {
            None
        };
        log.stop = stop;
        logs.push(log);
        if let Some(s) = stop {
            break (s, estimates);
        }
        gradient_step(table, t0, &estimates, step_size(j, opts.step_decay));
        prev_pg = Some(pg);
        j += 1;
    };

    let norms: Vec<f64> = estimates.iter().map(|e| e.norm()).collect();
    let (greedy_exchange_kw, repaired, infeasible) = repair_greedy(cfg, table, t0, &obs, &norms);
    StageResult { iterations: j + 1, logs, stop, estimates, greedy_exchange_kw, repaired, infeasible, shortfall }
}
