use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nfa_lab::harness::{self, Counterexample, ExperimentConfig, SweepAxes, DEFAULT_SAMPLES, OSCILLATION_INDICES, SEED_ENV};
use nfa_lab::Error;

/// Train and diagnose deep linear networks against the neural feature ansatz.
#[derive(Parser)]
#[command(name = "nfa-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run {
        config: PathBuf,
        /// Width 64, 2048 points, 60,000 epochs.
        #[arg(long)]
        paper_scale: bool,
        /// Override the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the Cartesian product of parameter axes over a base config.
    Sweep {
        config: PathBuf,
        /// JSON object mapping axis names to value lists.
        #[arg(long)]
        axes: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        paper_scale: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the relu_sum or oscillation counterexample report.
    Counterexample {
        /// `relu_sum` or `oscillation`.
        name: String,
        /// Monte-Carlo sample count.
        #[arg(long, default_value_t = DEFAULT_SAMPLES)]
        n: usize,
        /// Oscillation indices (comma separated).
        #[arg(long, value_delimiter = ',')]
        index: Option<Vec<u32>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "counterexamples")]
        output: PathBuf,
    },
    /// Render summary tables for a run or sweep directory.
    Report { dir: PathBuf },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::ConfigInvalid(_) => 2,
        Error::DivergenceDetected { .. } => 3,
        _ => 1,
    }
}

fn load_config(path: &Path, paper_scale: bool, output: Option<PathBuf>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(path)?;
    if paper_scale {
        cfg.apply_paper_scale();
    }
    cfg.apply_env_seed()?;
    if let Some(dir) = output {
        cfg.output_dir = dir;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config, paper_scale, output } => {
            let cfg = load_config(&config, paper_scale, output)?;
            let summary = harness::run(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if let Some(epoch) = summary.diverged_at.filter(|_| !summary.is_ok()) {
                return Err(Error::DivergenceDetected { epoch });
            }
            Ok(())
        }
        Command::Sweep { config, axes, jobs, paper_scale, output } => {
            let cfg = load_config(&config, paper_scale, output)?;
            let text = fs::read_to_string(&axes).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", axes.display())))?;
            let axes: SweepAxes = serde_json::from_str::<BTreeMap<_, _>>(&text)
                .map_err(|e| Error::ConfigInvalid(format!("{}: {e}", axes.display())))?;
            let rows = harness::sweep(&cfg, &axes, jobs)?;
            let failed = rows.iter().filter(|r| r.summary.as_ref().is_none_or(|s| !s.is_ok())).count();
            eprintln!("{} runs, {failed} nan; results in {}", rows.len(), cfg.output_dir.display());
            print!("{}", harness::render_report(&cfg.output_dir)?);
            Ok(())
        }
        Command::Counterexample { name, n, index, seed, output } => {
            let which: Counterexample = name.parse()?;
            let seed = match std::env::var(SEED_ENV) {
                Ok(raw) => raw
                    .trim()
                    .parse()
                    .map_err(|_| Error::ConfigInvalid(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?,
                Err(_) => seed,
            };
            let indices = index.unwrap_or_else(|| OSCILLATION_INDICES.to_vec());
            let report = harness::counterexample_report(which, n, &indices, seed, &output)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Report { dir } => {
            print!("{}", harness::render_report(&dir)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
