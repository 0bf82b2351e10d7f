use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;

use super::output::{csv_bytes, fmt_f64, fmt_opt, write_atomic, write_json};
use super::sweep::{pivot_table, Cell};
use super::RunSummary;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{agop_empirical, neural_feature_matrix};
use crate::nfa::{alpha_sweep_against, best_alpha, default_alpha_tilde_grid};
use crate::rng::{derive_seed, seeded};
use crate::targets::{oscillation_counterexample, relu_sum_counterexample, OscillationReport, INPUT_HALF_WIDTH};

/// Default Monte-Carlo sample count for counterexample reports.
pub const DEFAULT_SAMPLES: usize = 1_000_000;

/// Oscillation indices reported by default.
pub const OSCILLATION_INDICES: [u32; 4] = [1, 2, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Counterexample {
    /// `[x₁]₊ + [x₂]₊` fitted by a narrow and a widened one-layer ReLU net.
    ReluSum,
    /// `(1/n)·cos(n²x₁) + x₂` against `x₂`.
    Oscillation,
}

impl FromStr for Counterexample {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu_sum" | "relu-sum" => Ok(Counterexample::ReluSum),
            "oscillation" => Ok(Counterexample::Oscillation),
            other => Err(Error::ConfigInvalid(format!(
                "unknown counterexample {other:?} (expected relu_sum or oscillation)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NetAlignment {
    pub feature: Matrix,
    pub best_alpha: f64,
    pub best_cosine: f64,
    pub cosine_at_alpha_one: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReluSumReport {
    pub samples: usize,
    pub exact_agop: Matrix,
    pub empirical_agop: Matrix,
    /// Largest entrywise gap between the empirical and exact AGOP.
    pub max_entry_error: f64,
    pub narrow: NetAlignment,
    pub wide: NetAlignment,
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum CounterexampleReport {
    ReluSum(ReluSumReport),
    Oscillation(Vec<OscillationReport>),
}

fn alignment(feature: Matrix, agop: &Matrix, grid: &[f64]) -> Result<(NetAlignment, Vec<f64>)> {
    let points = alpha_sweep_against(&feature, agop, grid)?;
    let best = best_alpha(&points).ok_or(Error::InvalidArgument("empty α grid".into()))?;
    let at_one = alpha_sweep_against(&feature, agop, &[1.0])?[0].cosine;
    let cosines = points.iter().map(|p| p.cosine).collect();
    Ok((NetAlignment { feature, best_alpha: best.alpha, best_cosine: best.cosine, cosine_at_alpha_one: at_one }, cosines))
}

/// Computes the relu_sum report with `samples` inputs drawn uniformly from the
/// centred unit square; returns the per-α cosines of both nets as well.
pub fn relu_sum_report(samples: usize, seed: u64) -> Result<(ReluSumReport, Vec<(f64, f64, f64)>)> {
    if samples == 0 {
        return Err(Error::EmptyDataset);
    }
    let ex = relu_sum_counterexample();
    let mut rng = seeded(derive_seed(seed, &["counterexample", "relu_sum"]));
    let h = INPUT_HALF_WIDTH;
    let xs = Matrix::from_fn(samples, 2, |_, _| rng.random_range(-h..h));
    let empirical_agop = agop_empirical(&ex.target, &xs)?;
    let max_entry_error = empirical_agop.sub(&ex.exact_agop)?.max_abs();
    // One linear layer, so α̃ = α.
    let grid = default_alpha_tilde_grid();
    let (narrow, narrow_cos) = alignment(neural_feature_matrix(ex.narrow.stack()), &ex.exact_agop, &grid)?;
    let (wide, wide_cos) = alignment(neural_feature_matrix(ex.wide.stack()), &ex.exact_agop, &grid)?;
    let curve = grid.iter().zip(narrow_cos.iter().zip(&wide_cos)).map(|(&a, (&n, &w))| (a, n, w)).collect();
    Ok((ReluSumReport { samples, exact_agop: ex.exact_agop, empirical_agop, max_entry_error, narrow, wide }, curve))
}

/// Runs one counterexample and writes its files into `out_dir`:
/// `relu_sum.json` + `relu_sum_alpha.csv` (`alpha_tilde,narrow_cosine,wide_cosine`), or
/// `oscillation.json` + `oscillation.csv`
/// (`n,cosine,cosine_closed_form,cosine_std_error,l1_gap,l1_gap_closed_form,l1_gap_std_error`).
pub fn counterexample_report(
    which: Counterexample,
    samples: usize,
    indices: &[u32],
    seed: u64,
    out_dir: &Path,
) -> Result<CounterexampleReport> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    match which {
        Counterexample::ReluSum => {
            let (report, curve) = relu_sum_report(samples, seed)?;
            let header: Vec<String> = ["alpha_tilde", "narrow_cosine", "wide_cosine"].iter().map(|s| s.to_string()).collect();
            let rows: Vec<Vec<String>> =
                curve.iter().map(|&(a, n, w)| vec![fmt_f64(a), fmt_f64(n), fmt_f64(w)]).collect();
            write_atomic(&out_dir.join("relu_sum_alpha.csv"), &csv_bytes(&header, &rows)?)?;
            write_json(&out_dir.join("relu_sum.json"), &report)?;
            Ok(CounterexampleReport::ReluSum(report))
        }
        Counterexample::Oscillation => {
            if indices.is_empty() {
                return Err(Error::InvalidArgument("need at least one oscillation index".into()));
            }
            let reports = indices
                .iter()
                .map(|&n| {
                    let mut rng = seeded(derive_seed(seed, &["counterexample", "oscillation", &n.to_string()]));
                    oscillation_counterexample(n, samples, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let header: Vec<String> = [
                "n",
                "cosine",
                "cosine_closed_form",
                "cosine_std_error",
                "l1_gap",
                "l1_gap_closed_form",
                "l1_gap_std_error",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect();
            let rows: Vec<Vec<String>> = reports
                .iter()
                .map(|r| {
                    vec![
                        r.n.to_string(),
                        fmt_f64(r.cosine),
                        fmt_f64(r.cosine_closed_form),
                        fmt_f64(r.cosine_std_error),
                        fmt_f64(r.l1_gap),
                        fmt_f64(r.l1_gap_closed_form),
                        fmt_f64(r.l1_gap_std_error),
                    ]
                })
                .collect();
            write_atomic(&out_dir.join("oscillation.csv"), &csv_bytes(&header, &rows)?)?;
            write_json(&out_dir.join("oscillation.json"), &reports)?;
            Ok(CounterexampleReport::Oscillation(reports))
        }
    }
}

fn collect_summaries(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_summaries(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "summary.json") {
            out.push(path);
        }
    }
    Ok(())
}

fn text_table(bytes: &[u8]) -> Result<String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes);
    let rows: Vec<Vec<String>> = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut text = String::new();
    for row in &rows {
        let cells: Vec<String> = row.iter().zip(&widths).map(|(s, &w)| format!("{s:>w$}")).collect();
        let _ = writeln!(text, "{}", cells.join("  ").trim_end());
    }
    Ok(text)
}

/// Collects every `summary.json` under `dir` into `report.csv`
/// (`run,status,final_loss,cos_inv_L,best_alpha_tilde,defect_rate,gap_power_rate,gap_root_rate,epochs`)
/// and, if `dir` holds a `sweep.csv`, regenerates `sweep_table.csv` from it.
/// Returns the tables as aligned text.
pub fn render_report(dir: &Path) -> Result<String> {
    if !dir.is_dir() {
        return Err(Error::ConfigInvalid(format!("{} is not a directory", dir.display())));
    }
    let mut paths = Vec::new();
    collect_summaries(dir, &mut paths)?;
    let header: Vec<String> = [
        "run",
        "status",
        "final_loss",
        "cos_inv_L",
        "best_alpha_tilde",
        "defect_rate",
        "gap_power_rate",
        "gap_root_rate",
        "epochs",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut rows = Vec::new();
    for path in &paths {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: RunSummary = serde_json::from_str(&text)?;
        let run = path
            .parent()
            .and_then(|p| p.strip_prefix(dir).ok())
            .map(|p| p.display().to_string())
            .filter(|p| !p.is_empty())
            .unwrap_or_else(|| ".".to_string());
        rows.push(vec![
            run,
            if s.is_ok() { "ok" } else { "nan" }.to_string(),
            fmt_opt(s.final_loss),
            fmt_opt(s.final_cos_inv_l),
            fmt_opt(s.best_alpha_tilde),
            fmt_opt(s.defect_decay_rate),
            fmt_opt(s.power_gap_rate),
            fmt_opt(s.root_gap_rate),
            s.epochs.to_string(),
        ]);
    }
    let report = csv_bytes(&header, &rows)?;
    write_atomic(&dir.join("report.csv"), &report)?;
    let mut text = text_table(&report)?;

    let sweep_path = dir.join("sweep.csv");
    if sweep_path.is_file() {
        let mut reader = csv::Reader::from_path(&sweep_path)?;
        let head = reader.headers()?.clone();
        let col = |name: &str| {
            head.iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::ConfigInvalid(format!("sweep.csv lacks column {name}")))
        };
        let (si, li, la, op, co) = (col("sigma")?, col("layers")?, col("lambda")?, col("optimizer")?, col("cos_inv_L")?);
        let parse = |s: &str| s.parse::<f64>().map_err(|_| Error::ConfigInvalid(format!("bad number {s:?} in sweep.csv")));
        let mut cells = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            cells.push(Cell {
                sigma: parse(&rec[si])?,
                layers: rec[li].parse().map_err(|_| Error::ConfigInvalid(format!("bad depth {:?}", &rec[li])))?,
                lambda: parse(&rec[la])?,
                optimizer: rec[op].to_string(),
                cosine: parse(&rec[co]).ok().filter(|v| v.is_finite()),
            });
        }
        let table = pivot_table(&cells)?;
        write_atomic(&dir.join("sweep_table.csv"), &table)?;
        text.push('\n');
        text.push_str(&text_table(&table)?);
    }
    Ok(text)
}
