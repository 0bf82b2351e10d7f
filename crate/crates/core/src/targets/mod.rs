//! Synthetic regression targets: low-rank multi-index functions, the two
//! counterexample families, datasets and low-rank structure checks.

mod dataset;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cosine_similarity, svd, Matrix};
use crate::network::{agop_empirical, Differentiable, Head, LinearStack, Network};
use crate::rng::SeededRng;

pub use dataset::{Dataset, DatasetSidecar};

/// Half-width of the input cube `[-½, ½]^d`.
pub const INPUT_HALF_WIDTH: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Relu,
    /// `exp(−z²)`.
    Gauss,
    Identity,
}

impl Link {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Link::Relu => z.max(0.0),
            Link::Gauss => (-z * z).exp(),
            Link::Identity => z,
        }
    }

    /// Derivative, with the ReLU kink assigned slope 0.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Link::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Link::Gauss => -2.0 * z * (-z * z).exp(),
            Link::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetOutput {
    /// `headᵀ g(Ax + b)`.
    Scalar { head: Vec<f64> },
    /// `g(Ax + b)`, or `M g(Ax + b)` when a mixing matrix is given.
    Vector { mix: Option<Matrix> },
}

/// `f(x) = out(g(Ax + b))` with `A` an `r×d` index matrix of rank `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTarget", into = "RawTarget")]
pub struct MultiIndexTarget {
    a_matrix: Matrix,
    bias: Vec<f64>,
    link: Link,
    output: TargetOutput,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    a_matrix: Matrix,
    bias: Vec<f64>,
    link: Link,
    output: TargetOutput,
}

impl TryFrom<RawTarget> for MultiIndexTarget {
    type Error = Error;

    fn try_from(raw: RawTarget) -> Result<Self> {
        MultiIndexTarget::new(raw.a_matrix, raw.bias, raw.link, raw.output)
    }
}

impl From<MultiIndexTarget> for RawTarget {
    fn from(t: MultiIndexTarget) -> Self {
        RawTarget { a_matrix: t.a_matrix, bias: t.bias, link: t.link, output: t.output }
    }
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn unit_spectral(m: Matrix) -> Result<Matrix> {
    let top = svd(&m)?.singular_values[0];
    if top == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    Ok(m.scale(1.0 / top))
}

impl MultiIndexTarget {
    pub fn new(a_matrix: Matrix, bias: Vec<f64>, link: Link, output: TargetOutput) -> Result<Self> {
        let (r, d) = a_matrix.shape();
        if r == 0 || r > d {
            return Err(Error::ShapeError(format!("index matrix must be r×d with 1 ≤ r ≤ d, got {r}x{d}")));
        }
        if bias.len() != r {
            return Err(Error::ShapeMismatch(format!("bias of length {} for rank {r}", bias.len())));
        }
        match &output {
            TargetOutput::Scalar { head } if head.len() != r => {
                return Err(Error::ShapeMismatch(format!("head of length {} for rank {r}", head.len())));
            }
            TargetOutput::Vector { mix: Some(m) } if m.cols() != r => {
                return Err(Error::ShapeMismatch(format!("mixing matrix with {} columns for rank {r}", m.cols())));
            }
            _ => {}
        }
        if !a_matrix.is_finite() || bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(MultiIndexTarget { a_matrix, bias, link, output })
    }

    /// Random target: entries of `A`, `b`, the head and the mixing matrix are
    /// uniform on `(−1, 1)`; `A` and the mixing matrix are scaled to unit
    /// spectral norm. `outputs = None` gives a scalar target; `Some(m)` a
    /// vector target with `m` outputs (mixed unless `m = rank`).
    pub fn random(
        input_dim: usize,
        rank: usize,
        link: Link,
        outputs: Option<usize>,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if rank == 0 || rank > input_dim {
            return Err(Error::ShapeError(format!("rank {rank} outside 1..={input_dim}")));
        }
        let a_matrix = unit_spectral(uniform_matrix(rank, input_dim, rng))?;
        let bias = (0..rank).map(|_| rng.random_range(-1.0..1.0)).collect();
        let output = match outputs {
            None => TargetOutput::Scalar { head: (0..rank).map(|_| rng.random_range(-1.0..1.0)).collect() },
            Some(0) => return Err(Error::ShapeError("vector target needs at least one output".into())),
            Some(m) if m == rank => TargetOutput::Vector { mix: None },
            Some(m) => TargetOutput::Vector { mix: Some(unit_spectral(uniform_matrix(m, rank, rng))?) },
        };
        MultiIndexTarget::new(a_matrix, bias, link, output)
    }

    pub fn a_matrix(&self) -> &Matrix {
        &self.a_matrix
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn link(&self) -> Link {
        self.link
    }

    pub fn output(&self) -> &TargetOutput {
        &self.output
    }

    pub fn rank(&self) -> usize {
        self.a_matrix.rows()
    }

    fn preactivation(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.a_matrix.matvec(x)?;
        z.iter_mut().zip(&self.bias).for_each(|(zi, bi)| *zi += bi);
        Ok(z)
    }
}

impl Differentiable for MultiIndexTarget {
    fn input_dim(&self) -> usize {
        self.a_matrix.cols()
    }

    fn output_dim(&self) -> usize {
        match &self.output {
            TargetOutput::Scalar { .. } => 1,
            TargetOutput::Vector { mix: Some(m) } => m.rows(),
            TargetOutput::Vector { mix: None } => self.rank(),
        }
    }

    fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g: Vec<f64> = self.preactivation(x)?.into_iter().map(|z| self.link.apply(z)).collect();
        match &self.output {
            TargetOutput::Scalar { head } => Ok(vec![head.iter().zip(&g).map(|(h, v)| h * v).sum()]),
            TargetOutput::Vector { mix: Some(m) } => m.matvec(&g),
            TargetOutput::Vector { mix: None } => Ok(g),
        }
    }

    fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        let slopes: Vec<f64> = self.preactivation(x)?.into_iter().map(|z| self.link.derivative(z)).collect();
        let d = self.input_dim();
        match &self.output {
            TargetOutput::Scalar { head } => {
                let w: Vec<f64> = head.iter().zip(&slopes).map(|(h, s)| h * s).collect();
                Matrix::from_vec(1, d, self.a_matrix.t_matvec(&w)?)
            }
            TargetOutput::Vector { mix } => {
                let scaled = Matrix::from_fn(self.rank(), d, |r, c| slopes[r] * self.a_matrix[(r, c)]);
                match mix {
                    Some(m) => m.matmul(&scaled),
                    None => Ok(scaled),
                }
            }
        }
    }
}

/// Inputs uniform on `[−½, ½]^d`, outputs `f(x) + σ·N(0, 1)` per coordinate.
pub fn sample_multiindex<F: Differentiable + ?Sized>(
    target: &F,
    n: usize,
    sigma: f64,
    rng: &mut SeededRng,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level must be non-negative, got {sigma}")));
    }
    let d = target.input_dim();
    let m = target.output_dim();
    let inputs = Matrix::from_fn(n, d, |_, _| rng.random_range(-INPUT_HALF_WIDTH..INPUT_HALF_WIDTH));
    let mut ys = Vec::with_capacity(n * m);
    for i in 0..n {
        for v in target.value(inputs.row(i))? {
            let noise: f64 = if sigma > 0.0 { StandardNormal.sample(rng) } else { 0.0 };
            ys.push(v + sigma * noise);
        }
    }
    let mut data = Dataset::new(inputs, Matrix::from_vec(n, m, ys)?)?;
    data.noise_sigma = sigma;
    Ok(data)
}

/// `[x₁]₊ + [x₂]₊` together with its closed-form expected AGOP and two
/// networks that interpolate it.
#[derive(Debug, Clone)]
pub struct ReluSumExample {
    pub target: MultiIndexTarget,
    pub exact_agop: Matrix,
    /// First layer `I₂`, head `(1, 1)`.
    pub narrow: Network,
    /// First layer `[[1,0],[0,1],[1,1]]`, head `(1, 1, 0)`.
    pub wide: Network,
}

pub fn relu_sum_counterexample() -> ReluSumExample {
    let target = MultiIndexTarget::new(
        Matrix::identity(2),
        vec![0.0, 0.0],
        Link::Relu,
        TargetOutput::Scalar { head: vec![1.0, 1.0] },
    )
    .expect("valid by construction");
    let exact_agop = Matrix::from_rows(&[vec![0.5, 0.25], vec![0.25, 0.5]]).expect("2x2");
    let narrow_stack = LinearStack::new(vec![Matrix::identity(2)], Some(vec![0.0; 2])).expect("valid");
    let narrow = Network::new(narrow_stack, Head::Relu { a: vec![1.0, 1.0], b2: 0.0 }).expect("valid");
    let wide_w = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).expect("3x2");
    let wide_stack = LinearStack::new(vec![wide_w], Some(vec![0.0; 3])).expect("valid");
    let wide = Network::new(wide_stack, Head::Relu { a: vec![1.0, 1.0, 0.0], b2: 0.0 }).expect("valid");
    ReluSumExample { target, exact_agop, narrow, wide }
}

/// `(1/n)·cos(n²x₁) + x₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscillationTarget {
    pub n: u32,
}

impl Differentiable for OscillationTarget {
    fn input_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x, 2)?;
        let n = f64::from(self.n);
        Ok(vec![(n * n * x[0]).cos() / n + x[1]])
    }

    fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        check_len(x, 2)?;
        let n = f64::from(self.n);
        Matrix::from_vec(1, 2, vec![-n * (n * n * x[0]).sin(), 1.0])
    }
}

fn check_len(x: &[f64], d: usize) -> Result<()> {
    if x.len() == d {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!("input of length {} for a function on R^{d}", x.len())))
    }
}

/// Empirical comparison of `f_n` against its smooth limit `f(x) = x₂`.
#[derive(Debug, Clone, Serialize)]
pub struct OscillationReport {
    pub n: u32,
    pub samples: usize,
    pub agop_target: Matrix,
    pub agop_limit: Matrix,
    pub cosine: f64,
    /// `1/√(1 + (n²/2)²)`.
    pub cosine_closed_form: f64,
    /// Delta-method standard error of `cosine`.
    pub cosine_std_error: f64,
    /// Monte-Carlo `E|f − f_n|`.
    pub l1_gap: f64,
    /// `(2/π)/n`.
    pub l1_gap_closed_form: f64,
    pub l1_gap_std_error: f64,
}

/// Samples `x₁, x₂ ~ U[−π, π]` and measures AGOP alignment and the L¹ gap.
pub fn oscillation_counterexample(n: u32, samples: usize, rng: &mut SeededRng) -> Result<OscillationReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("oscillation index must be at least 1".into()));
    }
    if samples == 0 {
        return Err(Error::EmptyDataset);
    }
    let pi = std::f64::consts::PI;
    let target = OscillationTarget { n };
    let xs = Matrix::from_fn(samples, 2, |_, _| rng.random_range(-pi..pi));
    let agop_target = agop_empirical(&target, &xs)?;
    let agop_limit = Matrix::from_diag(&[0.0, 1.0]);
    let cosine = cosine_similarity(&agop_limit, &agop_target)?;

    let nf = f64::from(n);
    let (mut s1, mut s2) = (0.0, 0.0);
    for i in 0..samples {
        let gap = ((nf * nf * xs[(i, 0)]).cos() / nf).abs();
        s1 += gap;
        s2 += gap * gap;
    }
    let count = samples as f64;
    let l1_gap = s1 / count;
    let l1_var = (s2 / count - l1_gap * l1_gap).max(0.0);

    // cos = 1/√(1 + a₁₁² + 2a₁₂²); a₁₁ = n²·mean(sin²) has sd n²·sd(sin²)/√N.
    let a11 = agop_target[(0, 0)];
    let a11_sd = {
        let mut m2 = 0.0;
        for i in 0..samples {
            let s = (nf * nf * xs[(i, 0)]).sin();
            let v = nf * nf * s * s - a11;
            m2 += v * v;
        }
        (m2 / count).sqrt() / count.sqrt()
    };
    let denom = 1.0 + a11 * a11 + 2.0 * agop_target[(0, 1)].powi(2);
    let cosine_std_error = a11.abs() * denom.powf(-1.5) * a11_sd;

    Ok(OscillationReport {
        n,
        samples,
        agop_target,
        agop_limit,
        cosine,
        cosine_closed_form: 1.0 / (1.0 + (nf * nf / 2.0).powi(2)).sqrt(),
        cosine_std_error,
        l1_gap,
        l1_gap_closed_form: 2.0 / pi / nf,
        l1_gap_std_error: (l1_var / count).sqrt(),
    })
}

/// Worst-case violations of the low-rank structure of a target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubspaceReport {
    /// Dimension of the orthogonal complement of the index row space.
    pub complement_dim: usize,
    /// `max |f(x_T + x_⊥) − f(x_T)|`.
    pub invariance_error: f64,
    /// `max ‖P_⊥ ∇f(x)‖` over probe points.
    pub gradient_leak: f64,
    /// `max x_⊥ᵀ A_f x_⊥` over unit complement directions.
    pub complement_energy: f64,
}

impl SubspaceReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.invariance_error <= tol && self.gradient_leak <= tol && self.complement_energy <= tol
    }
}

/// Probes invariance of `f` along the complement of the row space of `A`,
/// confinement of gradients to that row space, and the vanishing AGOP
/// quadratic form on the complement.
pub fn subspace_checks(target: &MultiIndexTarget, probes: usize, rng: &mut SeededRng) -> Result<SubspaceReport> {
    if probes == 0 {
        return Err(Error::InvalidArgument("need at least one probe".into()));
    }
    let d = target.input_dim();
    let r = target.rank();
    // Orthonormal basis of the row space from the right singular vectors.
    let basis = svd(target.a_matrix())?.v;
    let project = |x: &[f64]| -> Vec<f64> {
        let coords = basis.t_matvec(x).expect("dims conform");
        basis.matvec(&coords).expect("dims conform")
    };

    let xs = Matrix::from_fn(probes, d, |_, _| rng.random_range(-INPUT_HALF_WIDTH..INPUT_HALF_WIDTH));
    let agop = agop_empirical(target, &xs)?;
    let mut report = SubspaceReport {
        complement_dim: d - r,
        invariance_error: 0.0,
        gradient_leak: 0.0,
        complement_energy: 0.0,
    };
    if d == r {
        return Ok(report);
    }
    for i in 0..probes {
        let x = xs.row(i);
        let x_t = project(x);
        let full = target.value(x)?;
        let reduced = target.value(&x_t)?;
        for (a, b) in full.iter().zip(&reduced) {
            report.invariance_error = report.invariance_error.max((a - b).abs());
        }

        let jac = target.jacobian(x)?;
        for row in 0..jac.rows() {
            let g = jac.row(row);
            let leak: Vec<f64> = g.iter().zip(project(g)).map(|(a, b)| a - b).collect();
            report.gradient_leak = report.gradient_leak.max(crate::linalg::norm2(&leak));
        }

        let mut perp: Vec<f64> = x.iter().zip(&x_t).map(|(a, b)| a - b).collect();
        let norm = crate::linalg::norm2(&perp);
        if norm > 0.0 {
            perp.iter_mut().for_each(|v| *v /= norm);
            let energy = crate::linalg::dot(&perp, &agop.matvec(&perp)?);
            report.complement_energy = report.complement_energy.max(energy.abs());
        }
    }
    Ok(report)
}

/// `σ_i / σ₁` for the singular values of `w`, descending.
pub fn singular_value_profile(w: &Matrix) -> Result<Vec<f64>> {
    let sv = svd(w)?.singular_values;
    let top = sv.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    Ok(sv.iter().map(|s| s / top).collect())
}
