use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nlval::config::{Mode, ScenarioConfig};
use nlval::harness::{run_scenario, FailureRecord};
use nlval::Error;

#[derive(Parser)]
#[command(name = "nlval", version, about = "Nonlinear valuation scenarios: PDE, backward Monte Carlo and trading ledger")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the repo-drift PDE and write the value surface.
    Value(RunArgs),
    /// Sweep the risk-free rate and measure the dependence of the price on it.
    Invariance(RunArgs),
    /// Compare the PDE value with the backward Monte Carlo estimates.
    McCompare(RunArgs),
    /// Replay the trading ledger over several step sizes.
    Ledger(RunArgs),
    /// Check the funding-discounted representation of the PDE value.
    Representation(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Random seed; overrides `mc.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Grid refinement multiplier for the PDE.
    #[arg(long, default_value_t = 1)]
    refine: usize,
}

fn run(mode: Mode, args: &RunArgs) -> Result<(bool, PathBuf), (Error, Option<PathBuf>)> {
    let mut cfg = ScenarioConfig::from_path(&args.config).map_err(|e| (e, args.out.clone()))?;
    let out = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    cfg.refine(args.refine).map_err(|e| (e, Some(out.clone())))?;
    cfg.mode = Some(mode);
    let outcome = run_scenario(&cfg, mode, &out, args.refine).map_err(|e| (e, Some(out.clone())))?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    Ok((outcome.pass, out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, args) = match &cli.command {
        Command::Value(a) => (Mode::Value, a),
        Command::Invariance(a) => (Mode::Invariance, a),
        Command::McCompare(a) => (Mode::McCompare, a),
        Command::Ledger(a) => (Mode::Ledger, a),
        Command::Representation(a) => (Mode::Representation, a),
    };
    match run(mode, args) {
        Ok((true, out)) => {
            println!("{}: PASS ({})", mode.label(), out.display());
            ExitCode::SUCCESS
        }
        Ok((false, out)) => {
            println!("{}: FAIL ({})", mode.label(), out.display());
            ExitCode::from(1)
        }
        Err((err, out)) => {
            let record = FailureRecord::new(Some(mode), &err);
            if let Some(dir) = out {
                if let Err(e) = record.write(&dir) {
                    eprintln!("could not write failure record: {e}");
                }
            }
            eprintln!("error: {err}");
            ExitCode::from(record.exit_code as u8)
        }
    }
}
