use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use evsched_core::harness::{
    compare_dirs, diagnostics_jsonl, iters_csv, run_event_based, run_ideal, run_rule_based, EventRun, RunReport,
};
use evsched_core::optimizer::OptimizeOptions;
use evsched_core::policy::{action_probabilities, load_checkpoint, save_checkpoint};
use evsched_core::scenario::MicrogridConfig;
use evsched_core::{ConfigError, SimError};

const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(name = "evsched", version, about = "Event-based EV charging scheduler for building microgrids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Rule,
    Event,
    Ideal,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy on a scenario and write its trace and report.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        out: PathBuf,
        /// Seed of the rollout streams (event mode); defaults to `--seed`.
        #[arg(long)]
        policy_seed: Option<u64>,
    },
    /// Event-based run with explicit optimizer settings; also saves the policy.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        policy_seed: Option<u64>,
        /// Start from a saved policy instead of uniform weights.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare runs on the same scenario.
    Compare {
        #[arg(long, num_args = 2.., required = true)]
        runs: Vec<PathBuf>,
        /// Also write costs.csv, exchange.csv and iterations.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a saved policy as CSV.
    DumpPolicy {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Include cells that still hold their initial uniform weights.
        #[arg(long)]
        all: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.downcast_ref::<ConfigError>().is_some()) {
                ExitCode::from(EXIT_CONFIG)
            } else if e.chain().any(|c| matches!(c.downcast_ref::<SimError>(), Some(SimError::NoFeasibleSchedule))) {
                ExitCode::from(EXIT_INFEASIBLE)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate { config, seed, mode, out, policy_seed } => {
            let cfg = load_config(&config)?;
            match mode {
                ModeArg::Rule => finish(&run_rule_based(&cfg, seed), &out),
                ModeArg::Ideal => finish(&run_ideal(&cfg, seed)?, &out),
                ModeArg::Event => {
                    let opts = OptimizeOptions::from_config(&cfg, policy_seed.unwrap_or(seed));
                    let run = run_event_based(&cfg, seed, &opts, None)?;
                    write_event_outputs(&run, &out)?;
                    finish(&run.report, &out)
                }
            }
        }
        Command::Optimize { config, seed, paths, max_iter, out, policy_seed, checkpoint } => {
            let cfg = load_config(&config)?;
            let mut opts = OptimizeOptions::from_config(&cfg, policy_seed.unwrap_or(seed));
            opts.paths = paths.unwrap_or(opts.paths);
            opts.max_iter = max_iter.unwrap_or(opts.max_iter);
            let initial = match checkpoint {
                Some(p) => Some(load_checkpoint(&p).with_context(|| format!("loading {}", p.display()))?),
                None => None,
            };
            let run = run_event_based(&cfg, seed, &opts, initial)?;
            write_event_outputs(&run, &out)?;
            finish(&run.report, &out)
        }
        Command::Compare { runs, out } => {
            let cmp = compare_dirs(&runs)?;
            print!("{}", cmp.cost_table());
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("costs.csv"), cmp.cost_table())?;
                fs::write(dir.join("exchange.csv"), cmp.exchange_csv())?;
                fs::write(dir.join("iterations.csv"), cmp.histogram_csv())?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::DumpPolicy { checkpoint, all } => {
            let table = load_checkpoint(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
            let [buildings, stages, bins, m] = table.dims();
            let actions: Vec<String> = table.actions().iter().map(|a| format!("p_{a}")).collect();
            println!("building,stage,bin,expected_ratio,{}", actions.join(","));
            for k in 0..buildings {
                for t in 0..stages {
                    for bin in 0..bins {
                        let cell = table.cell(k, t, bin);
                        if !all && cell.iter().all(|w| *w == cell[0]) {
                            continue;
                        }
                        let probs = action_probabilities(cell)?;
                        let cols: Vec<String> = probs.iter().map(|p| p.to_string()).collect();
                        debug_assert_eq!(cols.len(), m);
                        println!("{},{t},{bin},{},{}", k + 1, table.expected_ratio(k, t, bin), cols.join(","));
                    }
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_config(path: &Path) -> Result<MicrogridConfig> {
    Ok(MicrogridConfig::load(path)?)
}

fn write_event_outputs(run: &EventRun, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    save_checkpoint(&run.table, out.join("policy.ckpt"))?;
    fs::write(out.join("iters.csv"), iters_csv(&run.logs()))?;
    fs::write(out.join("diagnostics.jsonl"), diagnostics_jsonl(&run.results, &run.stages))?;
    Ok(())
}

/// Writes the trace and report, prints a one-line summary and picks the
/// exit code.
fn finish(report: &RunReport, out: &Path) -> Result<ExitCode> {
    report.write(out).with_context(|| format!("writing {}", out.display()))?;
    let s = &report.summary;
    println!(
        "{}: cost {:.2} RMB, {} violating stages, {} infeasible stages, hash {}",
        s.label,
        s.total_cost_rmb,
        s.violation_stages.len(),
        s.infeasible_stages.len(),
        s.scenario_hash
    );
    if s.infeasible_stages.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_INFEASIBLE))
    }
}
