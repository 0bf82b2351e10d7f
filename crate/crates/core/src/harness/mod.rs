//! Config-driven experiments: single runs, parameter sweeps, counterexample
//! reports and summary tables, with reproducible on-disk artifacts.

mod output;
mod reports;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::{default_uniform_init, force_balanced};
use crate::network::{Head, LinearStack, Network};
use crate::nfa::{default_alpha_tilde_grid, fit_decay_rate, AlignmentTrace, TraceRecorder};
use crate::optim::{train, OptimizerConfig, OptimizerKind, Schedule};
use crate::rng::{derive_seed, seeded, SeededRng};
use crate::targets::{sample_multiindex, singular_value_profile, Dataset, DatasetSidecar, Link, MultiIndexTarget};

pub use output::write_atomic;
pub use reports::{
    counterexample_report, relu_sum_report, render_report, Counterexample, CounterexampleReport, NetAlignment,
    ReluSumReport, DEFAULT_SAMPLES, OSCILLATION_INDICES,
};
pub use sweep::{grid_points, sweep, sweep_csv, sweep_table_csv, SweepAxes, SweepRow};

/// Environment variable that overrides the data seed of any config.
pub const SEED_ENV: &str = "NFA_LAB_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Multivariate linear output.
    None,
    /// Scalar ReLU head on top of the linear stack.
    Relu,
    /// ReLU after every hidden layer, per-layer biases, scalar output.
    Feedforward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureConfig {
    /// Number of weight matrices.
    pub depth: usize,
    /// Hidden width.
    pub width: usize,
    pub head: HeadKind,
    pub balanced: bool,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig { depth: 5, width: 32, head: HeadKind::Relu, balanced: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub input_dim: usize,
    pub rank: usize,
    pub link: Link,
    /// `None` for a scalar target, `Some(m)` for `m` outputs.
    pub outputs: Option<usize>,
    pub sigma: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig { input_dim: 20, rank: 5, link: Link::Relu, outputs: None, sigma: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { n: 512, seed: 0 }
    }
}

/// One experiment. Missing sections take the desk-scale defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub architecture: ArchitectureConfig,
    pub target: TargetConfig,
    pub data: DataConfig,
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
    /// Scaled exponents `α̃ = Lα` swept at every record; defaults to 0.1..=3.0.
    pub alpha_grid: Option<Vec<f64>>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            architecture: ArchitectureConfig::default(),
            target: TargetConfig::default(),
            data: DataConfig::default(),
            optimizer: OptimizerConfig::default(),
            schedule: Schedule::default(),
            alpha_grid: None,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ExperimentConfig::from_json(&text)
    }

    /// Width 64, 2048 points and 60,000 main epochs.
    pub fn apply_paper_scale(&mut self) {
        self.architecture.width = 64;
        self.data.n = 2048;
        self.schedule.main_epochs = 60_000;
    }

    /// Replaces the data seed with `NFA_LAB_SEED` when it is set.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.data.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::ConfigInvalid(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        match self.architecture.head {
            HeadKind::None => self.target.outputs.unwrap_or(1),
            _ => 1,
        }
    }

    /// Layer widths `d_1, …, d_{L+1}` of the linear stack.
    pub fn widths(&self) -> Vec<usize> {
        let a = &self.architecture;
        let mut widths = vec![self.target.input_dim];
        widths.extend(std::iter::repeat_n(a.width, a.depth.saturating_sub(1)));
        widths.push(match a.head {
            HeadKind::Relu => a.width,
            _ => self.output_dim(),
        });
        widths
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        let a = &self.architecture;
        let t = &self.target;
        if a.depth == 0 || a.width == 0 {
            return bad("depth and width must be at least 1".into());
        }
        if t.input_dim == 0 || t.rank == 0 || t.rank > t.input_dim {
            return bad(format!("target rank {} must lie in 1..={}", t.rank, t.input_dim));
        }
        if t.outputs == Some(0) {
            return bad("target outputs must be at least 1".into());
        }
        if !(t.sigma >= 0.0 && t.sigma.is_finite()) {
            return bad(format!("sigma must be non-negative, got {}", t.sigma));
        }
        if self.data.n == 0 {
            return bad("data.n must be at least 1".into());
        }
        if a.head != HeadKind::None && t.outputs.is_some_and(|m| m != 1) {
            return bad("ReLU-head and feed-forward models need a scalar target".into());
        }
        if a.balanced {
            if a.head == HeadKind::Feedforward {
                return bad("balanced init applies to linear stacks only".into());
            }
            if let Some(w) = self.widths()[1..].iter().find(|&&w| w < t.input_dim) {
                return bad(format!("balanced init needs every width ≥ input dim {}, found {w}", t.input_dim));
            }
        }
        if let Some(grid) = &self.alpha_grid {
            if grid.is_empty() || grid.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
                return bad("alpha_grid must be a nonempty list of positive numbers".into());
            }
        }
        self.optimizer.validate()?;
        self.schedule.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// Training produced a non-finite loss or parameter.
    Nan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub seed: u64,
    pub epochs: usize,
    pub flow_time: f64,
    pub final_loss: Option<f64>,
    /// `cos(W₁ᵀW₁, A^{1/L})` at the last record.
    pub final_cos_inv_l: Option<f64>,
    /// `α̃` with the highest cosine at the last record.
    pub best_alpha_tilde: Option<f64>,
    pub best_alpha_cosine: Option<f64>,
    /// Fitted log-slope of the first balancedness defect against time.
    pub defect_decay_rate: Option<f64>,
    pub power_gap_rate: Option<f64>,
    pub root_gap_rate: Option<f64>,
    /// Normalized singular values of `W₁`.
    pub singular_value_profile: Option<Vec<f64>>,
    pub diverged_at: Option<usize>,
}

/// Everything a run produces, before anything touches the disk.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: ExperimentConfig,
    pub target: MultiIndexTarget,
    pub data: Dataset,
    pub trace: AlignmentTrace,
    /// Final network; `None` if training diverged.
    pub net: Option<Network>,
    pub summary: RunSummary,
}

fn uniform_vec(len: usize, bound: f64, rng: &mut SeededRng) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Builds the initial network described by `cfg`. Biases and the head vector
/// follow the same fan-in uniform rule as the weights.
pub fn build_network(cfg: &ExperimentConfig, rng: &mut SeededRng) -> Result<Network> {
    let widths = cfg.widths();
    let stack = default_uniform_init(&widths, rng)?;
    let fan_in_bound = |l: usize| 1.0 / (widths[l] as f64).sqrt();
    let last = widths.len() - 2;
    let head = cfg.architecture.head;
    let stack = if head == HeadKind::Feedforward {
        stack
    } else {
        let (weights, _) = stack.into_parts();
        let bias = uniform_vec(widths[last + 1], fan_in_bound(last), rng);
        LinearStack::new(weights, Some(bias))?
    };
    let stack = if cfg.architecture.balanced { force_balanced(&stack, rng)? } else { stack };
    match head {
        HeadKind::None => Ok(Network::linear(stack)),
        HeadKind::Relu => {
            let bound = 1.0 / (cfg.architecture.width as f64).sqrt();
            let a = uniform_vec(cfg.architecture.width, bound, rng);
            let b2 = rng.random_range(-bound..bound);
            Network::new(stack, Head::Relu { a, b2 })
        }
        HeadKind::Feedforward => {
            let biases = (0..=last).map(|l| uniform_vec(widths[l + 1], fan_in_bound(l), rng)).collect();
            Network::new(stack, Head::Feedforward { biases })
        }
    }
}

/// Runs an experiment in memory.
pub fn execute(config: &ExperimentConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let seed = config.data.seed;
    let t = &config.target;
    let target_outputs = match config.architecture.head {
        HeadKind::None => t.outputs,
        _ => None,
    };
    let target =
        MultiIndexTarget::random(t.input_dim, t.rank, t.link, target_outputs, &mut seeded(derive_seed(seed, &["target"])))?;
    let mut data = sample_multiindex(&target, config.data.n, t.sigma, &mut seeded(derive_seed(seed, &["data"])))?;
    data.seed = Some(seed);
    let net = build_network(config, &mut seeded(derive_seed(seed, &["init"])))?;

    let grid = config.alpha_grid.clone().unwrap_or_else(default_alpha_tilde_grid);
    let mut recorder = TraceRecorder::with_alpha_grid(grid);
    let outcome = train(
        net,
        &data,
        &config.optimizer,
        &config.schedule,
        seeded(derive_seed(seed, &["train"])),
        &mut [&mut recorder],
    );
    let trace = recorder.trace;
    let (net, status, epochs, flow_time) = match outcome {
        Ok(o) => (Some(o.net), RunStatus::Ok, o.epochs, o.flow_time),
        Err(Error::DivergenceDetected { epoch }) => {
            (None, RunStatus::Nan, epoch, trace.flow_time.last().copied().unwrap_or(0.0))
        }
        Err(e) => return Err(e),
    };
    let summary = summarize(&trace, net.as_ref(), status, seed, epochs, flow_time);
    Ok(RunArtifacts { config: config.clone(), target, data, trace, net, summary })
}

fn summarize(
    trace: &AlignmentTrace,
    net: Option<&Network>,
    status: RunStatus,
    seed: u64,
    epochs: usize,
    flow_time: f64,
) -> RunSummary {
    let ok = status == RunStatus::Ok;
    let last = |v: &[f64]| if ok { v.last().copied() } else { None };
    let best = trace.alpha_cosines.last().filter(|_| ok).and_then(|row| {
        row.iter()
            .zip(&trace.alpha_tilde_grid)
            .fold(None, |acc: Option<(f64, f64)>, (&c, &a)| match acc {
                Some((_, bc)) if bc >= c => acc,
                _ => Some((a, c)),
            })
    });
    let defect_decay_rate = (ok && trace.defects.first().is_some_and(|d| !d.is_empty()))
        .then(|| fit_decay_rate(&trace.flow_time, &trace.defect_series(0)))
        .flatten();
    RunSummary {
        status,
        seed,
        epochs,
        flow_time,
        final_loss: last(&trace.loss),
        final_cos_inv_l: last(&trace.cos_inv_l),
        best_alpha_tilde: best.map(|b| b.0),
        best_alpha_cosine: best.map(|b| b.1),
        defect_decay_rate,
        power_gap_rate: ok.then(|| fit_decay_rate(&trace.flow_time, &trace.gap_power)).flatten(),
        root_gap_rate: ok.then(|| fit_decay_rate(&trace.flow_time, &trace.gap_root)).flatten(),
        singular_value_profile: net.and_then(|n| singular_value_profile(n.stack().weight(0)).ok()),
        diverged_at: trace.diverged_at,
    }
}

/// Trace CSV: `epoch,t,loss,cos_inv_L,defect_1..defect_{L−1},gap_power,gap_root,root_gap_bound`.
pub fn trace_csv(trace: &AlignmentTrace) -> Result<Vec<u8>> {
    let pairs = trace.depth.saturating_sub(1);
    let mut header: Vec<String> = ["epoch", "t", "loss", "cos_inv_L"].iter().map(|s| s.to_string()).collect();
    header.extend((1..=pairs).map(|l| format!("defect_{l}")));
    header.extend(["gap_power", "gap_root", "root_gap_bound"].iter().map(|s| s.to_string()));
    let rows: Vec<Vec<String>> = (0..trace.len())
        .map(|i| {
            let mut row = vec![
                trace.epochs[i].to_string(),
                output::fmt_f64(trace.flow_time[i]),
                output::fmt_f64(trace.loss[i]),
                output::fmt_f64(trace.cos_inv_l[i]),
            ];
            row.extend(trace.defects[i].iter().map(|&d| output::fmt_f64(d)));
            row.push(output::fmt_f64(trace.gap_power[i]));
            row.push(output::fmt_f64(trace.gap_root[i]));
            row.push(output::fmt_f64(trace.root_gap_bound[i]));
            row
        })
        .collect();
    output::csv_bytes(&header, &rows)
}

/// α-sweep CSV in long form: `epoch,alpha_tilde,cosine`.
pub fn alpha_sweep_csv(trace: &AlignmentTrace) -> Result<Vec<u8>> {
    let header: Vec<String> = ["epoch", "alpha_tilde", "cosine"].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (epoch, row) in trace.epochs.iter().zip(&trace.alpha_cosines) {
        for (a, c) in trace.alpha_tilde_grid.iter().zip(row) {
            rows.push(vec![epoch.to_string(), output::fmt_f64(*a), output::fmt_f64(*c)]);
        }
    }
    output::csv_bytes(&header, &rows)
}

/// Writes a run's artifacts into `dir`.
pub fn write_artifacts(run: &RunArtifacts, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    output::write_json(&dir.join("config.json"), &run.config)?;
    write_atomic(&dir.join("trace.csv"), &trace_csv(&run.trace)?)?;
    write_atomic(&dir.join("alpha_sweep.csv"), &alpha_sweep_csv(&run.trace)?)?;
    if let Some(net) = &run.net {
        output::write_json(&dir.join("checkpoint.json"), net)?;
    }
    let tmp_data = dir.join(".dataset.csv.tmp");
    run.data.write_csv(&tmp_data)?;
    fs::rename(&tmp_data, dir.join("dataset.csv")).map_err(|e| Error::io(dir.join("dataset.csv"), e))?;
    let sidecar = DatasetSidecar {
        target: run.target.clone(),
        n: run.data.len(),
        noise_sigma: run.data.noise_sigma,
        seed: run.config.data.seed,
    };
    output::write_json(&dir.join("dataset.json"), &sidecar)?;
    output::write_json(&dir.join("summary.json"), &run.summary)
}

/// Runs an experiment and writes its artifacts to the configured directory.
pub fn run(config: &ExperimentConfig) -> Result<RunSummary> {
    let artifacts = execute(config)?;
    write_artifacts(&artifacts, &config.output_dir)?;
    Ok(artifacts.summary)
}

impl RunSummary {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Gd => "gd",
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}
