//! Run reports and their on-disk forms: `trace.csv`, `report.txt`,
//! `iters.csv` and `diagnostics.jsonl`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::optimizer::{IterationLog, StageResult, StopReason};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingRow {
    pub building: usize,
    pub price: f64,
    pub load_kw: f64,
    pub wind_kw: f64,
    pub charge_kw: f64,
    pub hes_kw: f64,
    pub exchange_kw: f64,
    pub soc_before: f64,
    pub soc_after: f64,
    pub event_value: f64,
    pub event_bin: usize,
    pub n_must: usize,
    pub n_chargeable: usize,
    pub charged: usize,
    pub alpha: f64,
    pub cost_rmb: f64,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    /// Stage of the reported day.
    pub stage: usize,
    pub hour: f64,
    pub total_exchange_kw: f64,
    /// Must-charge EVs and base load alone break the exchange bound.
    pub infeasible: bool,
    pub buildings: Vec<BuildingRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub stages: usize,
    pub mean: f64,
    pub max: usize,
    pub min: usize,
    pub stopped_by_norm: usize,
    pub stopped_by_stall: usize,
    pub stopped_by_max_iter: usize,
    pub adjusted_stages: usize,
    pub repaired_stages: usize,
    /// `histogram[i]` counts stages that used `i + 1` iterations.
    pub histogram: Vec<usize>,
}

impl IterationStats {
    pub fn from_results<'a>(results: impl IntoIterator<Item = &'a StageResult>, max_iter: usize) -> Self {
        let mut s = IterationStats {
            stages: 0,
            mean: 0.0,
            max: 0,
            min: usize::MAX,
            stopped_by_norm: 0,
            stopped_by_stall: 0,
            stopped_by_max_iter: 0,
            adjusted_stages: 0,
            repaired_stages: 0,
            histogram: vec![0; max_iter.max(1)],
        };
        let mut total = 0;
        for r in results {
            s.stages += 1;
            total += r.iterations;
            s.max = s.max.max(r.iterations);
            s.min = s.min.min(r.iterations);
            match r.stop {
                StopReason::Norm => s.stopped_by_norm += 1,
                StopReason::Stall => s.stopped_by_stall += 1,
                StopReason::MaxIter => s.stopped_by_max_iter += 1,
            }
            s.adjusted_stages += usize::from(r.logs.iter().any(|l| l.adjusted));
            s.repaired_stages += usize::from(r.repaired);
            let slot = r.iterations.clamp(1, s.histogram.len()) - 1;
            s.histogram[slot] += 1;
        }
        if s.stages == 0 {
            s.min = 0;
        } else {
            s.mean = total as f64 / s.stages as f64;
        }
        s
    }
}

/// Everything in `report.txt`; the per-stage rows live in `trace.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub label: String,
    pub heuristic: bool,
    pub scenario_seed: u64,
    pub policy_seed: Option<u64>,
    pub scenario_hash: String,
    pub days_simulated: usize,
    pub reported_stages: usize,
    pub total_cost_rmb: f64,
    pub violation_stages: Vec<usize>,
    pub infeasible_stages: Vec<usize>,
    pub unresolved_stages: Vec<usize>,
    pub wall_clock_s: f64,
    pub iterations: Option<IterationStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub summary: RunSummary,
    pub stages: Vec<StageRow>,
}

impl RunReport {
    pub fn total_cost(&self) -> f64 {
        self.summary.total_cost_rmb
    }

    /// Independent re-summation of the stage costs.
    pub fn resummed_cost(&self) -> f64 {
        self.stages.iter().flat_map(|s| &s.buildings).map(|b| b.cost_rmb).sum()
    }

    pub fn exchange_series(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.total_exchange_kw).collect()
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from(
            "stage,hour,building,price,load_kw,wind_kw,charge_kw,hes_kw,exchange_kw,total_exchange_kw,soc_before,soc_after,\
             event_value,event_bin,n_must,n_chargeable,charged,alpha,cost_rmb,probabilities\n",
        );
        for s in &self.stages {
            for b in &s.buildings {
                let probs: Vec<String> = b.probabilities.iter().map(|p| p.to_string()).collect();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    s.stage,
                    s.hour,
                    b.building,
                    b.price,
                    b.load_kw,
                    b.wind_kw,
                    b.charge_kw,
                    b.hes_kw,
                    b.exchange_kw,
                    s.total_exchange_kw,
                    b.soc_before,
                    b.soc_after,
                    b.event_value,
                    b.event_bin,
                    b.n_must,
                    b.n_chargeable,
                    b.charged,
                    b.alpha,
                    b.cost_rmb,
                    probs.join(";")
                );
            }
        }
        out
    }

    pub fn report_txt(&self) -> String {
        toml::to_string(&self.summary).expect("summary serializes")
    }

    /// Writes `trace.csv` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("trace.csv"), self.trace_csv())?;
        fs::write(dir.join("report.txt"), self.report_txt())
    }
}

pub fn iters_csv(logs: &[IterationLog]) -> String {
    let mut out = String::from(
        "stage,iteration,step,projected_norm,grad_norms,expected_exchange_kw,violation_kw,adjusted,missing_values,stop\n",
    );
    for l in logs {
        let norms: Vec<String> = l.grad_norms.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            l.stage,
            l.iteration,
            l.step,
            l.projected_norm,
            norms.join(";"),
            l.expected_exchange_kw,
            l.violation_kw,
            l.adjusted,
            l.missing_values,
            l.stop.map_or("", |s| s.as_str())
        );
    }
    out
}

#[derive(Serialize)]
struct DiagnosticLine<'a> {
    stage: usize,
    iterations: usize,
    stop: StopReason,
    repaired: bool,
    infeasible: bool,
    shortfall: bool,
    greedy_exchange_kw: f64,
    estimates: &'a [crate::gradient::GradientEstimate],
}

/// One JSON object per optimized stage.
pub fn diagnostics_jsonl(results: &[StageResult], stages: &[usize]) -> String {
    let mut out = String::new();
    for (r, &t) in results.iter().zip(stages) {
        let line = DiagnosticLine {
            stage: t,
            iterations: r.iterations,
            stop: r.stop,
            repaired: r.repaired,
            infeasible: r.infeasible,
            shortfall: r.shortfall,
            greedy_exchange_kw: r.greedy_exchange_kw,
            estimates: &r.estimates,
        };
        out.push_str(&serde_json::to_string(&line).expect("diagnostics serialize"));
        out.push('\n');
    }
    out
}

/// Reads back `report.txt` and the per-stage total exchange of `trace.csv`.
pub fn load_run(dir: &Path) -> io::Result<(RunSummary, Vec<f64>)> {
    let text = fs::read_to_string(dir.join("report.txt"))?;
    let summary: RunSummary =
        toml::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    let trace = fs::read_to_string(dir.join("trace.csv"))?;
    let mut series: Vec<f64> = Vec::new();
    let mut last_stage = None;
    for line in trace.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || io::Error::new(io::ErrorKind::InvalidData, format!("bad trace row: {line}"));
        let stage: usize = cols.first().and_then(|c| c.parse().ok()).ok_or_else(bad)?;
        let total: f64 = cols.get(9).and_then(|c| c.parse().ok()).ok_or_else(bad)?;
        if last_stage != Some(stage) {
            series.push(total);
            last_stage = Some(stage);
        }
    }
    Ok((summary, series))
}
