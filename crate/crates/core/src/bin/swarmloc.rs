use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use swarmloc::estimator::Pruning;
use swarmloc::eval::{
    ablate, compare_pruning, read_log, run_log, run_scenario, write_log, write_outputs, write_reports, Ablation,
    EvalError, MetricReport, RunOptions, RunResult,
};
use swarmloc::simworld::{simulate, Scenario};

#[derive(Parser)]
#[command(name = "swarmloc", version, about = "Decentralized swarm state estimation on synthetic scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a measurement log from a scenario.
    Simulate(Common),
    /// Replay an existing measurement log through the estimators.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Measurement log written by `simulate`.
        #[arg(long)]
        log: PathBuf,
    },
    /// Simulate, estimate and score a scenario.
    Evaluate(Common),
    /// Score the full system and each single-edge-family ablation.
    Ablate(Common),
    /// Score random and FIFO frame pruning.
    ComparePruning(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// full, no-uwb, no-detection or no-map.
    #[arg(long, default_value = "full")]
    ablate: Ablation,
    /// Drop probability of distance broadcasts.
    #[arg(long)]
    loss_uwb: Option<f64>,
    /// Drop probability of VIO broadcasts.
    #[arg(long)]
    loss_vio: Option<f64>,
    #[arg(long)]
    m_max: Option<usize>,
    /// random or fifo.
    #[arg(long)]
    pruning: Option<Pruning>,
    /// Also write every network delivery and drop.
    #[arg(long)]
    packet_log: bool,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            seed: self.seed,
            ablation: self.ablate,
            loss_uwb: self.loss_uwb,
            loss_vio: self.loss_vio,
            m_max: self.m_max,
            pruning: self.pruning,
            packet_log: self.packet_log,
        }
    }

    fn scenario(&self) -> Result<Scenario, EvalError> {
        Ok(Scenario::load(&self.config)?)
    }

    fn create_out_dir(&self) -> Result<(), EvalError> {
        std::fs::create_dir_all(&self.out_dir).map_err(|source| EvalError::Write {
            path: self.out_dir.clone(),
            source,
        })
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

fn print_summary(label: &str, r: &MetricReport) {
    let s = &r.summary;
    println!(
        "{label:<14} RE {:>8} m  VIO RE {:>8} m  ATE {:>8} m  drift {:>8}  VIO drift {:>8}  init {}  converged {}",
        fmt_opt(s.re_pos),
        fmt_opt(s.vio_re_pos),
        fmt_opt(s.ate_pos),
        fmt_opt(s.drift),
        fmt_opt(s.vio_drift),
        s.all_initialized,
        s.all_converged,
    );
}

fn finish(run: &RunResult, common: &Common) -> Result<ExitCode, EvalError> {
    write_outputs(&common.out_dir, run)?;
    print_summary(run.report.ablation.as_str(), &run.report);
    if run.report.summary.any_diverged {
        eprintln!("estimator diverged");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn main_inner(cli: Cli) -> Result<ExitCode, EvalError> {
    match cli.command {
        Command::Simulate(c) => {
            let sc = c.options().apply(&c.scenario()?)?;
            let log = simulate(&sc)?;
            c.create_out_dir()?;
            let path = c.out_dir.join("log.jsonl");
            write_log(&path, &log)?;
            println!("wrote {} records to {}", log.records.len(), path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Estimate { common, log } => {
            let sc = common.options().apply(&common.scenario()?)?;
            let log = read_log(&log)?;
            let run = run_log(sc, log, &common.options())?;
            finish(&run, &common)
        }
        Command::Evaluate(c) => {
            let run = run_scenario(&c.scenario()?, &c.options())?;
            c.create_out_dir()?;
            write_log(&c.out_dir.join("log.jsonl"), &run.log)?;
            finish(&run, &c)
        }
        Command::Ablate(c) => {
            let reports = ablate(&c.scenario()?, &c.options())?;
            c.create_out_dir()?;
            write_reports(&c.out_dir.join("ablation.json"), &reports)?;
            for r in &reports {
                print_summary(r.ablation.as_str(), r);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ComparePruning(c) => {
            let reports = compare_pruning(&c.scenario()?, &c.options())?;
            c.create_out_dir()?;
            write_reports(&c.out_dir.join("pruning.json"), &reports)?;
            for r in &reports {
                let label = format!("{:?}", r.pruning).to_lowercase();
                print_summary(&label, r);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
