use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pacekit_core::config::{ConfigError, ExperimentConfig};
use pacekit_core::harness::{self, HarnessError};

#[derive(Parser, Debug)]
#[command(name = "pacekit", version, about = "Budget pacing benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tune and evaluate every selected algorithm; writes summary.csv and trace.csv.
    Simulate(Common),
    /// Re-run the tuned algorithms at each initial bid; writes sweep.csv.
    SweepInitBid(Common),
    /// Grid-search the hindsight-optimal constant bid; writes oracle.csv.
    Oracle(Common),
    /// Per-cycle bid traces only; writes trace.csv.
    Trace(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config file with flat dotted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated algorithm list, e.g. mpc,pid,dogd,optimal.
    #[arg(long)]
    algos: Option<String>,
    /// Extra `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    /// File first, then `--set`, then the dedicated flags.
    fn load(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(seed) = self.seed {
            cfg.apply_override(&format!("experiment.seed={seed}"))?;
        }
        if let Some(n) = self.episodes {
            cfg.apply_override(&format!("experiment.episodes={n}"))?;
        }
        if let Some(algos) = &self.algos {
            cfg.apply_override(&format!("experiment.algorithms=\"{algos}\""))?;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Stdout write that tolerates a closed pipe.
fn say(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn simulate(cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    let report = harness::run_benchmark(cfg)?;
    harness::emit_summary_csv(&report.runs, &cfg.output_dir.join("summary.csv"))?;
    harness::emit_trace_csv(&report.runs, &cfg.output_dir.join("trace.csv"))?;
    let mut text = harness::format_summary_table(&report.runs);
    let t = &report.tuned;
    text += &format!("pid kp={} ki={} kd={}  dogd {:?}\n", t.pid.kp, t.pid.ki, t.pid.kd, t.dogd.learning_rate);
    if let Some(o) = &t.oracle {
        text += &format!("oracle bid={:.6} status={:?}\n", o.bid, o.status);
    }
    say(&text);
    Ok(())
}

fn sweep(cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    let tuned = harness::prepare(cfg)?;
    let rows = harness::sweep_initial_bid(cfg, &tuned)?;
    harness::emit_sweep_csv(&rows, &cfg.output_dir.join("sweep.csv"))?;
    let mut text = String::new();
    for &algorithm in &cfg.algorithms {
        match harness::cpv_spread(&rows, algorithm) {
            Some(s) => text += &format!("{algorithm}: CPV spread {:.2}%\n", 100.0 * s),
            None => text += &format!("{algorithm}: CPV spread undefined\n"),
        }
    }
    say(&text);
    Ok(())
}

fn oracle(cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    let report = harness::run_oracle(cfg)?;
    harness::write_file(&cfg.output_dir.join("oracle.csv"), &harness::render_oracle_csv(&report))?;
    let cpv = report.cpv.map(|c| format!("{c:.6}")).unwrap_or_else(|| "-".into());
    say(&format!(
        "bid {:.6}  cpv {}  bur {:.3}%  lambda {:.6}  {:?}\n",
        report.bid, cpv, report.mean_bur, report.implied_dual, report.status
    ));
    Ok(())
}

fn trace(cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    let report = harness::run_benchmark(cfg)?;
    harness::emit_trace_csv(&report.runs, &cfg.output_dir.join("trace.csv"))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let (common, action): (&Common, fn(&ExperimentConfig) -> Result<(), HarnessError>) = match &cli.command {
        Command::Simulate(c) => (c, simulate),
        Command::SweepInitBid(c) => (c, sweep),
        Command::Oracle(c) => (c, oracle),
        Command::Trace(c) => (c, trace),
    };
    let cfg = common.load()?;
    action(&cfg)
}

fn report_error(e: &HarnessError, out: &Path) {
    match e {
        HarnessError::Io { .. } => eprintln!("error: {e} (output dir {})", out.display()),
        _ => eprintln!("error: {e}"),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let out = match &cli.command {
        Command::Simulate(c) | Command::SweepInitBid(c) | Command::Oracle(c) | Command::Trace(c) => {
            c.out.clone().unwrap_or_else(|| PathBuf::from("out"))
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e, &out);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
