//! Baselines, the end-to-end runner, reports and run comparison.

pub mod baselines;
pub mod compare;
pub mod report;
pub mod runner;

pub use baselines::{exhaustive_schedule, greedy_plan, ChargePlan, OracleSchedule, ORACLE_BUDGET};
pub use compare::{compare_dirs, compare_runs, Comparison, CostRow};
pub use report::{diagnostics_jsonl, iters_csv, load_run, BuildingRow, IterationStats, RunReport, RunSummary, StageRow};
pub use runner::{
    run_days, run_event_based, run_heuristic, run_ideal, run_ideal_oracle, run_rule_based, Choice, EventRun, Mode,
};
