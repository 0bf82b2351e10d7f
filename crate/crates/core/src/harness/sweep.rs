use std::collections::BTreeMap;
use std::fs;

use rayon::prelude::*;
use serde_json::Value;

use super::output::{csv_bytes, fmt_opt, write_atomic};
use super::{execute, write_artifacts, ExperimentConfig, RunStatus, RunSummary};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Axis name → values. Names are either shorthands (`depth`, `width`, `head`,
/// `balanced`, `rank`, `sigma`, `link`, `n`, `optimizer`, `learning_rate`,
/// `weight_decay`, `momentum`, `batch_size`) or JSON pointers into the config
/// such as `/schedule/main_epochs`.
pub type SweepAxes = BTreeMap<String, Vec<Value>>;

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Axis name → value at this point.
    pub coords: BTreeMap<String, Value>,
    pub config: ExperimentConfig,
    /// `None` when the run failed for a reason other than divergence.
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn status(&self) -> RunStatus {
        self.summary.as_ref().map_or(RunStatus::Nan, |s| s.status)
    }

    /// Final `cos(W₁ᵀW₁, A^{1/L})`, `None` for failed or diverged runs.
    pub fn final_cosine(&self) -> Option<f64> {
        self.summary.as_ref().and_then(|s| s.final_cos_inv_l)
    }
}

fn pointer_for(axis: &str) -> Result<&str> {
    Ok(match axis {
        "depth" => "/architecture/depth",
        "width" => "/architecture/width",
        "head" => "/architecture/head",
        "balanced" => "/architecture/balanced",
        "rank" => "/target/rank",
        "sigma" => "/target/sigma",
        "link" => "/target/link",
        "n" => "/data/n",
        "optimizer" => "/optimizer/kind",
        "learning_rate" => "/optimizer/learning_rate",
        "weight_decay" => "/optimizer/weight_decay",
        "momentum" => "/optimizer/momentum",
        "batch_size" => "/optimizer/batch_size",
        p if p.starts_with('/') => p,
        other => return Err(Error::ConfigInvalid(format!("unknown sweep axis {other:?}"))),
    })
}

fn coord_label(axis: &str, value: &Value) -> String {
    match value {
        Value::String(s) => format!("{axis}={s}"),
        v => format!("{axis}={v}"),
    }
}

/// Resolves every grid point into a validated config, in lexicographic axis order.
pub fn grid_points(base: &ExperimentConfig, axes: &SweepAxes) -> Result<Vec<(BTreeMap<String, Value>, ExperimentConfig)>> {
    if axes.is_empty() || axes.values().any(Vec::is_empty) {
        return Err(Error::ConfigInvalid("sweep axes must be nonempty".into()));
    }
    let base_json = serde_json::to_value(base)?;
    let mut points: Vec<BTreeMap<String, Value>> = vec![BTreeMap::new()];
    for (axis, values) in axes {
        pointer_for(axis)?;
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.insert(axis.clone(), v.clone());
                    q
                })
            })
            .collect();
    }
    points
        .into_iter()
        .map(|coords| {
            let mut json = base_json.clone();
            for (axis, value) in &coords {
                let ptr = pointer_for(axis)?;
                let slot = json
                    .pointer_mut(ptr)
                    .ok_or_else(|| Error::ConfigInvalid(format!("sweep axis {axis:?} does not name a config field")))?;
                *slot = value.clone();
            }
            let mut cfg: ExperimentConfig =
                serde_json::from_value(json).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
            let labels: Vec<String> = coords.iter().map(|(a, v)| coord_label(a, v)).collect();
            let label_refs: Vec<&str> = labels.iter().map(String::as_str).collect();
            cfg.data.seed = derive_seed(base.data.seed, &label_refs);
            cfg.output_dir = base.output_dir.join(format!("run_{}", labels.join("_").replace('/', "~")));
            cfg.validate().map_err(|e| Error::ConfigInvalid(format!("at {}: {e}", labels.join(", "))))?;
            Ok((coords, cfg))
        })
        .collect()
}

/// Runs the Cartesian product of `axes` over `base` on `jobs` worker threads.
///
/// Writes each run's artifacts under `base.output_dir/run_<coords>/`, plus
/// `sweep.csv` (one row per run) and `sweep_table.csv` (final cosine pivoted
/// into `sigma,layers,lambda` rows and one column per optimizer). Runs that
/// fail become `nan` rows; the sweep itself only fails on invalid configs or
/// I/O errors on the summary files.
pub fn sweep(base: &ExperimentConfig, axes: &SweepAxes, jobs: usize) -> Result<Vec<SweepRow>> {
    let points = grid_points(base, axes)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        points
            .into_par_iter()
            .map(|(coords, config)| {
                let outcome = execute(&config).and_then(|run| {
                    write_artifacts(&run, &config.output_dir)?;
                    Ok(run.summary)
                });
                match outcome {
                    Ok(summary) => SweepRow { coords, config, summary: Some(summary), error: None },
                    Err(e) => SweepRow { coords, config, summary: None, error: Some(e.to_string()) },
                }
            })
            .collect()
    });
    fs::create_dir_all(&base.output_dir).map_err(|e| Error::io(&base.output_dir, e))?;
    write_atomic(&base.output_dir.join("sweep.csv"), &sweep_csv(&rows)?)?;
    write_atomic(&base.output_dir.join("sweep_table.csv"), &sweep_table_csv(&rows)?)?;
    Ok(rows)
}

const FIXED_COLUMNS: [&str; 8] = ["run", "seed", "sigma", "layers", "lambda", "optimizer", "rank", "status"];
const METRIC_COLUMNS: [&str; 10] = [
    "final_loss",
    "cos_inv_L",
    "best_alpha_tilde",
    "best_alpha_cosine",
    "defect_rate",
    "gap_power_rate",
    "gap_root_rate",
    "epochs",
    "flow_time",
    "error",
];

/// Long-format CSV: fixed identifying columns, one column per axis, then metrics.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let axes: Vec<String> = rows.first().map(|r| r.coords.keys().cloned().collect()).unwrap_or_default();
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(axes.iter().map(|a| format!("axis:{a}")));
    header.extend(METRIC_COLUMNS.iter().map(|s| s.to_string()));
    let body: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let c = &r.config;
            let s = r.summary.as_ref();
            let status = match r.status() {
                RunStatus::Ok => "ok",
                RunStatus::Nan => "nan",
            };
            let mut row = vec![
                i.to_string(),
                c.data.seed.to_string(),
                format!("{:?}", c.target.sigma),
                c.architecture.depth.to_string(),
                format!("{:?}", c.optimizer.weight_decay),
                c.optimizer.kind.name().to_string(),
                c.target.rank.to_string(),
                status.to_string(),
            ];
            row.extend(r.coords.values().map(|v| match v {
                Value::String(s) => s.clone(),
                v => v.to_string(),
            }));
            row.push(fmt_opt(s.and_then(|s| s.final_loss)));
            row.push(fmt_opt(s.and_then(|s| s.final_cos_inv_l)));
            row.push(fmt_opt(s.and_then(|s| s.best_alpha_tilde)));
            row.push(fmt_opt(s.and_then(|s| s.best_alpha_cosine)));
            row.push(fmt_opt(s.and_then(|s| s.defect_decay_rate)));
            row.push(fmt_opt(s.and_then(|s| s.power_gap_rate)));
            row.push(fmt_opt(s.and_then(|s| s.root_gap_rate)));
            row.push(s.map_or_else(String::new, |s| s.epochs.to_string()));
            row.push(fmt_opt(s.map(|s| s.flow_time)));
            row.push(r.error.clone().unwrap_or_default());
            row
        })
        .collect();
    csv_bytes(&header, &body)
}

/// One table cell: identifies a run by noise level, depth, weight decay and optimizer.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Cell {
    pub sigma: f64,
    pub layers: usize,
    pub lambda: f64,
    pub optimizer: String,
    pub cosine: Option<f64>,
}

/// Pivots cells into `sigma,layers,lambda,<optimizer>...` rows with values
/// rounded to two decimals; missing or failed cells read `nan`. Rows are
/// sorted by σ, then depth, then decreasing λ.
pub(crate) fn pivot_table(cells: &[Cell]) -> Result<Vec<u8>> {
    let mut optimizers: Vec<String> = cells.iter().map(|c| c.optimizer.clone()).collect();
    let order = |o: &str| ["gd", "sgd", "adam"].iter().position(|k| *k == o).unwrap_or(3);
    optimizers.sort_by(|a, b| order(a).cmp(&order(b)).then(a.cmp(b)));
    optimizers.dedup();
    let mut keys: Vec<(f64, usize, f64)> = cells.iter().map(|c| (c.sigma, c.layers, c.lambda)).collect();
    keys.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(b.2.total_cmp(&a.2)));
    keys.dedup();
    let mut header: Vec<String> = ["sigma", "layers", "lambda"].iter().map(|s| s.to_string()).collect();
    header.extend(optimizers.iter().cloned());
    let body: Vec<Vec<String>> = keys
        .iter()
        .map(|&(sigma, layers, lambda)| {
            let mut row = vec![format!("{sigma:?}"), layers.to_string(), format!("{lambda:e}")];
            for opt in &optimizers {
                // Last matching cell wins if a key repeats (e.g. extra axes).
                let value = cells
                    .iter()
                    .rev()
                    .find(|c| c.sigma == sigma && c.layers == layers && c.lambda == lambda && &c.optimizer == opt)
                    .and_then(|c| c.cosine);
                row.push(value.filter(|v| v.is_finite()).map_or_else(|| "nan".to_string(), |v| format!("{v:.2}")));
            }
            row
        })
        .collect();
    csv_bytes(&header, &body)
}

pub fn sweep_table_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let cells: Vec<Cell> = rows
        .iter()
        .map(|r| Cell {
            sigma: r.config.target.sigma,
            layers: r.config.architecture.depth,
            lambda: r.config.optimizer.weight_decay,
            optimizer: r.config.optimizer.kind.name().to_string(),
            cosine: r.final_cosine(),
        })
        .collect();
    pivot_table(&cells)
}
