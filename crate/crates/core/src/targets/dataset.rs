use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Inputs `x_i ∈ R^d` (rows of `inputs`) with targets `y_i ∈ R^m` (rows of `targets`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Matrix,
    pub noise_sigma: f64,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} inputs but {} targets",
                inputs.rows(),
                targets.rows()
            )));
        }
        if inputs.rows() == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(Dataset { inputs, targets, noise_sigma: 0.0, seed: None })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.cols()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    pub fn y(&self, i: usize) -> &[f64] {
        self.targets.row(i)
    }

    /// Copies the listed rows into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let d = self.input_dim();
        let m = self.output_dim();
        let xs = Matrix::from_fn(indices.len(), d, |r, c| self.inputs[(indices[r], c)]);
        let ys = Matrix::from_fn(indices.len(), m, |r, c| self.targets[(indices[r], c)]);
        let mut out = Dataset::new(xs, ys)?;
        out.noise_sigma = self.noise_sigma;
        out.seed = self.seed;
        Ok(out)
    }

    /// Writes `x_0..x_{d-1},y_0..y_{m-1}` rows with shortest round-trip decimals.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        let header: Vec<String> = (0..self.input_dim())
            .map(|i| format!("x_{i}"))
            .chain((0..self.output_dim()).map(|i| format!("y_{i}")))
            .collect();
        writer.write_record(&header)?;
        for i in 0..self.len() {
            let row: Vec<String> =
                self.x(i).iter().chain(self.y(i)).map(|v| format!("{v:?}")).collect();
            writer.write_record(&row)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a CSV written by [`Dataset::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Dataset> {
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?.clone();
        let d = header.iter().filter(|h| h.starts_with("x_")).count();
        let m = header.iter().filter(|h| h.starts_with("y_")).count();
        if d + m != header.len() {
            return Err(Error::ConfigInvalid(format!("unexpected dataset header in {}", path.display())));
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut n = 0;
        for record in reader.records() {
            let record = record?;
            for (k, field) in record.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::ConfigInvalid(format!("bad number {field:?} in {}", path.display()))
                })?;
                if k < d {
                    xs.push(v);
                } else {
                    ys.push(v);
                }
            }
            n += 1;
        }
        Dataset::new(Matrix::from_vec(n, d, xs)?, Matrix::from_vec(n, m, ys)?)
    }
}

/// JSON sidecar stored next to a dataset CSV.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetSidecar {
    pub target: super::MultiIndexTarget,
    pub n: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DatasetSidecar {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
