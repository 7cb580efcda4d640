//! Side-by-side comparison of runs on the same scenario.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::report::{load_run, RunSummary};
use crate::error::CompareError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub label: String,
    pub mode: String,
    pub heuristic: bool,
    pub total_cost_rmb: f64,
    /// Cost minus the first run's cost.
    pub difference_rmb: f64,
    /// Relative reduction against the first run.
    pub reduction: f64,
    pub violation_stages: usize,
    pub infeasible_stages: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub scenario_hash: String,
    pub rows: Vec<CostRow>,
    /// Total exchange per stage, one series per run.
    pub exchange_series: Vec<Vec<f64>>,
    /// Iteration histogram of every run that has one, by label.
    pub histograms: Vec<(String, Vec<usize>)>,
}

/// Compares runs given as (summary, exchange series); the first is the
/// reference. Every run must share one scenario hash.
pub fn compare_runs(runs: &[(RunSummary, Vec<f64>)]) -> Result<Comparison, CompareError> {
    if runs.len() < 2 {
        return Err(CompareError::TooFew(runs.len()));
    }
    let hash = runs[0].0.scenario_hash.clone();
    if let Some((s, _)) = runs.iter().find(|(s, _)| s.scenario_hash != hash) {
        return Err(CompareError::HashMismatch {
            label: s.label.clone(),
            expected: hash,
            found: s.scenario_hash.clone(),
        });
    }
    let base = runs[0].0.total_cost_rmb;
    let rows = runs
        .iter()
        .map(|(s, _)| CostRow {
            label: s.label.clone(),
            mode: s.mode.clone(),
            heuristic: s.heuristic,
            total_cost_rmb: s.total_cost_rmb,
            difference_rmb: s.total_cost_rmb - base,
            reduction: if base != 0.0 { (base - s.total_cost_rmb) / base } else { 0.0 },
            violation_stages: s.violation_stages.len(),
            infeasible_stages: s.infeasible_stages.len(),
        })
        .collect();
    let histograms = runs
        .iter()
        .filter_map(|(s, _)| s.iterations.as_ref().map(|i| (s.label.clone(), i.histogram.clone())))
        .collect();
    Ok(Comparison {
        scenario_hash: hash,
        rows,
        exchange_series: runs.iter().map(|(_, e)| e.clone()).collect(),
        histograms,
    })
}

/// Loads every run directory and compares them.
pub fn compare_dirs(dirs: &[impl AsRef<Path>]) -> Result<Comparison, CompareError> {
    let runs = dirs.iter().map(|d| load_run(d.as_ref())).collect::<Result<Vec<_>, _>>()?;
    compare_runs(&runs)
}

impl Comparison {
    pub fn cost_table(&self) -> String {
        let mut out = String::from("label,mode,heuristic,total_cost_rmb,difference_rmb,reduction,violation_stages,infeasible_stages\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.label, r.mode, r.heuristic, r.total_cost_rmb, r.difference_rmb, r.reduction, r.violation_stages, r.infeasible_stages
            );
        }
        out
    }

    /// One row per stage, one exchange column per run.
    pub fn exchange_csv(&self) -> String {
        let labels: Vec<&str> = self.rows.iter().map(|r| r.label.as_str()).collect();
        let mut out = format!("stage,{}\n", labels.join(","));
        let len = self.exchange_series.iter().map(Vec::len).max().unwrap_or(0);
        for t in 0..len {
            let cols: Vec<String> =
                self.exchange_series.iter().map(|s| s.get(t).map_or(String::new(), |g| g.to_string())).collect();
            let _ = writeln!(out, "{t},{}", cols.join(","));
        }
        out
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("label,iterations,stages\n");
        for (label, h) in &self.histograms {
            for (i, n) in h.iter().enumerate() {
                let _ = writeln!(out, "{label},{},{n}", i + 1);
            }
        }
        out
    }
}
