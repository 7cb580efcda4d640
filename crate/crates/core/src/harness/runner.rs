//! End-to-end runs: the true microgrid stepped stage by stage under one of
//! the controllers, with the last simulated day reported.

use std::time::Instant;

use super::baselines::{exhaustive_schedule, greedy_plan, planned_selection, ORACLE_BUDGET};
use super::report::{BuildingRow, IterationStats, RunReport, RunSummary, StageRow};
use crate::dynamics::{BuildingOutcome, Observation, Timeline, World};
use crate::error::SimError;
use crate::optimizer::{optimize_stage, OptimizeOptions, StageResult};
use crate::policy::{action_probabilities, charge_count, mllp_select, PolicyTable};
use crate::scenario::{MicrogridConfig, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Rule,
    Event,
    Ideal,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Rule => "rule",
            Mode::Event => "event",
            Mode::Ideal => "ideal",
        }
    }
}

/// What a controller applies at one building.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub alpha: f64,
    pub charged: Vec<usize>,
    pub probabilities: Vec<f64>,
}

impl Choice {
    /// A fixed selection, reported with its realized charge ratio.
    fn fixed(obs: &Observation, charged: Vec<usize>) -> Self {
        let alpha = if obs.n_c > obs.n_m {
            (charged.len().saturating_sub(obs.n_m)) as f64 / (obs.n_c - obs.n_m) as f64
        } else {
            1.0
        };
        Choice { alpha, charged, probabilities: Vec::new() }
    }
}

/// The simulated days and the first reported stage.
pub fn run_days(cfg: &MicrogridConfig) -> usize {
    cfg.warmup_days + 1
}

/// Exchange at `t` if every building charges only its must-charge EVs.
fn must_only_exchange(cfg: &MicrogridConfig, stage: usize, obs: &[Observation]) -> f64 {
    let phys = cfg.physics();
    obs.iter()
        .map(|o| {
            let p = o.n_m as f64 * phys.charge_kw;
            BuildingOutcome::settle(o.wind_kw, o.load_kw, p, o.soc, cfg.price_at(stage), &phys).exchange_kw
        })
        .sum()
}

struct Header<'a> {
    mode: Mode,
    label: &'a str,
    heuristic: bool,
    seed: u64,
    policy_seed: Option<u64>,
}

/// Steps the true microgrid through every simulated stage with `decide`.
fn drive<F>(cfg: &MicrogridConfig, header: Header<'_>, mut decide: F) -> Result<RunReport, SimError>
where
    F: FnMut(&World, &Timeline, &[Observation]) -> Result<Vec<Choice>, SimError>,
{
    let clock = Instant::now();
    let days = run_days(cfg);
    let scen = Scenario::generate(cfg, header.seed);
    let timeline = Timeline::new(cfg, &scen, days);
    let mut world = World::start(cfg, &timeline);
    let first = cfg.warmup_days * cfg.stages;
    let mut summary = RunSummary {
        mode: header.mode.as_str().to_string(),
        label: header.label.to_string(),
        heuristic: header.heuristic,
        scenario_seed: header.seed,
        policy_seed: header.policy_seed,
        scenario_hash: scen.hash.clone(),
        days_simulated: days,
        reported_stages: cfg.stages,
        total_cost_rmb: 0.0,
        violation_stages: Vec::new(),
        infeasible_stages: Vec::new(),
        unresolved_stages: Vec::new(),
        wall_clock_s: 0.0,
        iterations: None,
    };
    let mut stages = Vec::with_capacity(cfg.stages);

    for t in 0..days * cfg.stages {
        let obs: Vec<Observation> = (0..cfg.building_count()).map(|k| world.observe(cfg, &timeline, k)).collect();
        let infeasible = !cfg.grid.contains(must_only_exchange(cfg, t, &obs));
        let choices = decide(&world, &timeline, &obs)?;
        let charged: Vec<Vec<usize>> = choices.iter().map(|c| c.charged.clone()).collect();
        let out = world.step(cfg, &timeline, &charged)?;
        if t < first {
            continue;
        }
        let s = t - first;
        let total = out.total_exchange();
        if !cfg.grid.contains(total) {
            summary.violation_stages.push(s);
        }
        if infeasible {
            summary.infeasible_stages.push(s);
        }
        let buildings = out
            .buildings
            .iter()
            .zip(&obs)
            .zip(choices)
            .enumerate()
            .map(|(k, ((b, o), c))| BuildingRow {
                building: k + 1,
                price: cfg.price_at(t),
                load_kw: b.load_kw,
                wind_kw: b.wind_kw,
                charge_kw: b.charge_kw,
                hes_kw: b.hes_kw,
                exchange_kw: b.exchange_kw,
                soc_before: b.soc_before,
                soc_after: b.soc_after,
                event_value: o.event.value,
                event_bin: o.event.bin,
                n_must: o.n_m,
                n_chargeable: o.n_c,
                charged: c.charged.len(),
                alpha: c.alpha,
                cost_rmb: b.cost_rmb,
                probabilities: c.probabilities,
            })
            .collect();
        stages.push(StageRow {
            stage: s,
            hour: s as f64 * cfg.dt_hours,
            total_exchange_kw: total,
            infeasible,
            buildings,
        });
    }
    let mut report = RunReport { summary, stages };
    report.summary.total_cost_rmb = report.resummed_cost();
    report.summary.wall_clock_s = clock.elapsed().as_secs_f64();
    Ok(report)
}

// ── Rule-based ───────────────────────────────────────────────────────────────

/// Every parked EV with remaining demand charges at once.
pub fn run_rule_based(cfg: &MicrogridConfig, seed: u64) -> RunReport {
    let header = Header { mode: Mode::Rule, label: "rule-based", heuristic: false, seed, policy_seed: None };
    drive(cfg, header, |_, _, obs| {
        Ok(obs.iter().map(|o| Choice::fixed(o, sorted_ids(o))).collect())
    })
    .expect("charging every parked EV is always applicable")
}

fn sorted_ids(o: &Observation) -> Vec<usize> {
    let mut ids: Vec<usize> = o.candidates.iter().map(|c| c.id).collect();
    ids.sort_unstable();
    ids
}

// ── Event-based ──────────────────────────────────────────────────────────────

/// A finished event-based run with everything the optimizer produced.
#[derive(Debug, Clone)]
pub struct EventRun {
    pub report: RunReport,
    pub table: PolicyTable,
    /// Absolute stage of every entry in `results`.
    pub stages: Vec<usize>,
    pub results: Vec<StageResult>,
}

impl EventRun {
    pub fn logs(&self) -> Vec<crate::optimizer::IterationLog> {
        self.results.iter().flat_map(|r| r.logs.iter().cloned()).collect()
    }
}

/// Receding horizon: improve the policy for the current stage, apply its
/// greedy action with mLLLP dispatch, advance, repeat. The policy starts
/// uniform unless `initial` is given.
pub fn run_event_based(
    cfg: &MicrogridConfig,
    seed: u64,
    opts: &OptimizeOptions,
    initial: Option<PolicyTable>,
) -> Result<EventRun, SimError> {
    let mut table = initial.unwrap_or_else(|| {
        PolicyTable::uniform(cfg.building_count(), cfg.stages, cfg.optimizer.actions.clone(), cfg.optimizer.weight_floor)
    });
    let mut results = Vec::new();
    let mut stages = Vec::new();
    let header = Header { mode: Mode::Event, label: "event-based", heuristic: false, seed, policy_seed: Some(opts.seed) };
    let mut report = drive(cfg, header, |world, timeline, obs| {
        let res = optimize_stage(cfg, timeline, world, &mut table, opts);
        let t = world.stage;
        let choices = obs
            .iter()
            .enumerate()
            .map(|(k, o)| {
                let (_, alpha) = table.greedy_action(k, t, o.event.bin);
                let count = charge_count(o.n_m, o.n_c, alpha);
                let charged = mllp_select(&mut o.candidates.clone(), count)?;
                let probabilities = action_probabilities(table.cell(k, t, o.event.bin))?;
                Ok(Choice { alpha, charged, probabilities })
            })
            .collect::<Result<Vec<_>, SimError>>();
        results.push(res);
        stages.push(t);
        choices
    })?;
    let first = cfg.warmup_days * cfg.stages;
    let reported: Vec<&StageResult> =
        results.iter().zip(&stages).filter(|(_, &t)| t >= first).map(|(r, _)| r).collect();
    report.summary.unresolved_stages = reported
        .iter()
        .zip(first..)
        .filter(|(r, _)| r.infeasible)
        .map(|(_, t)| t - first)
        .collect();
    report.summary.iterations = Some(IterationStats::from_results(reported, opts.max_iter));
    Ok(EventRun { report, table, stages, results })
}

// ── Perfect-information references ───────────────────────────────────────────

/// Exhaustive search over every charging count, replayed on the true
/// microgrid. Fails when the instance has more than the leaf budget.
pub fn run_ideal_oracle(cfg: &MicrogridConfig, seed: u64, budget: usize) -> Result<RunReport, SimError> {
    let scen = Scenario::generate(cfg, seed);
    let days = run_days(cfg);
    let timeline = Timeline::new(cfg, &scen, days);
    let schedule = exhaustive_schedule(cfg, &timeline, days * cfg.stages, budget)?;
    let header = Header { mode: Mode::Ideal, label: "exhaustive", heuristic: false, seed, policy_seed: None };
    drive(cfg, header, |world, _, obs| {
        obs.iter()
            .zip(&schedule.counts[world.stage])
            .map(|(o, &n)| Ok(Choice::fixed(o, mllp_select(&mut o.candidates.clone(), n)?)))
            .collect()
    })
}

/// Greedy cheapest-stage plan with full knowledge of wind and itineraries.
/// A heuristic reference, not a bound.
pub fn run_heuristic(cfg: &MicrogridConfig, seed: u64) -> RunReport {
    let scen = Scenario::generate(cfg, seed);
    let days = run_days(cfg);
    let timeline = Timeline::new(cfg, &scen, days);
    let plan = greedy_plan(cfg, &timeline, days * cfg.stages);
    let header = Header { mode: Mode::Ideal, label: "perfect-information heuristic", heuristic: true, seed, policy_seed: None };
    drive(cfg, header, |world, _, obs| {
        Ok(obs.iter().map(|o| Choice::fixed(o, planned_selection(&plan, world, cfg, o))).collect())
    })
    .expect("planned EVs are always parked")
}

/// The exhaustive search when it fits the budget, otherwise the heuristic.
pub fn run_ideal(cfg: &MicrogridConfig, seed: u64) -> Result<RunReport, SimError> {
    match run_ideal_oracle(cfg, seed, ORACLE_BUDGET) {
        Err(SimError::BudgetExceeded { .. }) => Ok(run_heuristic(cfg, seed)),
        other => other,
    }
}

