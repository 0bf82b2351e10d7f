//! Weight initialization: the default uniform scheme, forced balancing of a
//! linear stack, and balancedness measurement.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{haar_columns, svd, Matrix};
use crate::network::LinearStack;
use crate::rng::SeededRng;

/// Stack with widths `d_1, …, d_{L+1}`; every entry of layer `l` is uniform
/// on `(−1/√d_l, 1/√d_l)` where `d_l` is the layer's fan-in.
pub fn default_uniform_init(widths: &[usize], rng: &mut SeededRng) -> Result<LinearStack> {
    if widths.len() < 2 {
        return Err(Error::ShapeError("need at least an input and an output width".into()));
    }
    if widths.contains(&0) {
        return Err(Error::ShapeError(format!("zero width in {widths:?}")));
    }
    let weights = widths
        .windows(2)
        .map(|pair| {
            let bound = 1.0 / (pair[0] as f64).sqrt();
            Matrix::from_fn(pair[1], pair[0], |_, _| rng.random_range(-bound..bound))
        })
        .collect();
    LinearStack::new(weights, None)
}

/// `E‖AᵀA‖_F²` for an `m×n` matrix with i.i.d. `U(−1, 1)` entries.
pub fn uniform_gram_moment(m: usize, n: usize) -> f64 {
    let (m, n) = (m as f64, n as f64);
    m * n * (0.2 + (m + n - 2.0) / 9.0)
}

/// Scale for `W₁` that matches `E‖W₁W₁ᵀ‖_F²` to `E‖W₂ᵀW₂‖_F²` under the
/// default uniform init with widths `d1 → d2 → d3`.
///
/// The ratio of the two moments is `d₁d₃(5d₂+5d₃−1) / (d₂²(5d₁+5d₂−1))`;
/// the statistic is quartic in the weights, so the scale is its fourth root.
pub fn w1_rescale_factor(d1: usize, d2: usize, d3: usize) -> f64 {
    if d1 == d2 && d2 == d3 {
        return 1.0;
    }
    let (d1, d2, d3) = (d1 as f64, d2 as f64, d3 as f64);
    let ratio = d1 * d3 * (5.0 * d2 + 5.0 * d3 - 1.0) / (d2 * d2 * (5.0 * d1 + 5.0 * d2 - 1.0));
    ratio.sqrt().sqrt()
}

/// Rebuilds a stack so that all adjacent layers are exactly balanced.
///
/// `W₁` is rescaled and factored as `U₁ΣV₁ᵀ`; each later layer becomes
/// `U_l Σ U_{l−1}ᵀ` with fresh Haar-distributed `U_l`. Every width after the
/// input must be at least the input width. A single-layer stack has nothing to
/// balance and is returned as is. The optional bias is kept.
pub fn force_balanced(stack: &LinearStack, rng: &mut SeededRng) -> Result<LinearStack> {
    if stack.depth() < 2 {
        return Ok(stack.clone());
    }
    let widths = stack.widths();
    let d1 = widths[0];
    if let Some((i, &w)) = widths.iter().enumerate().skip(1).find(|(_, &w)| w < d1) {
        return Err(Error::ShapeError(format!(
            "balanced init needs every width ≥ input width {d1}, but width {} is {w}",
            i + 1
        )));
    }
    let scale = w1_rescale_factor(widths[0], widths[1], widths[2]);
    let first = stack.weight(0).scale(scale);
    let dec = svd(&first)?;
    let sigma = Matrix::from_diag(&dec.singular_values);
    let mut weights = Vec::with_capacity(stack.depth());
    weights.push(first);
    let mut prev = dec.u;
    for &out in &widths[2..] {
        let next = haar_columns(out, d1, rng)?;
        weights.push(next.matmul(&sigma)?.matmul_t(&prev)?);
        prev = next;
    }
    LinearStack::new(weights, stack.bias1().map(<[f64]>::to_vec))
}

/// `W_l W_lᵀ − W_{l+1}ᵀ W_{l+1}` for each adjacent pair.
pub fn defect_matrices(stack: &LinearStack) -> Vec<Matrix> {
    stack
        .weights()
        .windows(2)
        .map(|pair| pair[0].outer_gram().sub(&pair[1].gram()).expect("adjacent layers conform"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    /// `‖W_l W_lᵀ − W_{l+1}ᵀ W_{l+1}‖_F` for `l = 1..L−1`.
    pub defects: Vec<f64>,
    /// Largest defect; for a stack at initialization this is `max_l ‖C_l‖_F`.
    pub c_max: f64,
}

pub fn balance_report(stack: &LinearStack) -> Result<BalanceReport> {
    if stack.depth() < 2 {
        return Err(Error::TooShallow(stack.depth()));
    }
    let defects: Vec<f64> = defect_matrices(stack).iter().map(Matrix::frobenius_norm).collect();
    let c_max = defects.iter().copied().fold(0.0, f64::max);
    Ok(BalanceReport { defects, c_max })
}
