//! Feature-alignment diagnostics: α-sweeps, alignment traces, exact and
//! asymptotic checks of `W₁ᵀW₁ ≈ A^{1/L}`, and the supporting matrix bounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::balance_report;
use crate::linalg::{cosine_similarity, matrix_int_power, sym_eig, Matrix, SymEig, CLAMP_TOL};
use crate::network::{agop_empirical, agop_linear, mse_loss, neural_feature_matrix, Head, LinearStack, Network};
use crate::optim::{Monitor, TrainState};
use crate::targets::Dataset;

/// Gaps below this are indistinguishable from round-off and left out of fits.
pub const FIT_FLOOR: f64 = 1e-12;
/// Fraction of recorded points dropped from the start of a rate fit.
pub const FIT_START: f64 = 0.2;
/// Fraction of recorded points at which a rate fit stops.
pub const FIT_END: f64 = 0.9;
/// Fewest recorded points accepted by [`check_nfa_asymptotic`].
pub const MIN_TRACE_POINTS: usize = 20;

/// Default grid of scaled exponents `α̃ = Lα`: 0.1, 0.15, …, 3.0.
pub fn default_alpha_tilde_grid() -> Vec<f64> {
    (2..=60).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub alpha: f64,
    pub cosine: f64,
}

fn checked_eig(a: &Matrix) -> Result<SymEig> {
    let eig = sym_eig(a)?;
    let lmax = eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    if let Some(&lmin) = eig.eigenvalues.last() {
        if lmin < -CLAMP_TOL * lmax {
            return Err(Error::NotPsd { eigenvalue: lmin });
        }
    }
    Ok(eig)
}

fn psd_power(eig: &SymEig, alpha: f64) -> Matrix {
    eig.map_spectrum(|l| if l > 0.0 { l.powf(alpha) } else { 0.0 })
}

/// `cos(W₁ᵀW₁, A^α)` for each `α`, with `A` the AGOP of the linear stack.
pub fn alpha_sweep(stack: &LinearStack, alphas: &[f64]) -> Result<Vec<AlphaPoint>> {
    alpha_sweep_against(&neural_feature_matrix(stack), &agop_linear(stack), alphas)
}

/// `cos(feature, A^α)` for each `α`.
pub fn alpha_sweep_against(feature: &Matrix, agop: &Matrix, alphas: &[f64]) -> Result<Vec<AlphaPoint>> {
    if agop.frobenius_norm() == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    let eig = checked_eig(agop)?;
    alphas
        .iter()
        .map(|&alpha| {
            if !(alpha > 0.0) {
                return Err(Error::InvalidArgument(format!("exponent must be positive, got {alpha}")));
            }
            Ok(AlphaPoint { alpha, cosine: cosine_similarity(feature, &psd_power(&eig, alpha))? })
        })
        .collect()
}

/// Exponent with the highest cosine; ties keep the smaller exponent.
pub fn best_alpha(points: &[AlphaPoint]) -> Option<AlphaPoint> {
    points.iter().copied().fold(None, |best, p| match best {
        Some(b) if b.cosine >= p.cosine => Some(b),
        _ => Some(p),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NfaVerdict {
    pub cosine: f64,
    pub frobenius_gap: f64,
    pub bound_value: f64,
    pub satisfied: bool,
}

/// Compares `W₁ᵀW₁` with `A^{1/L}`: satisfied when the Frobenius gap is at
/// most `tol·(1 + ‖A^{1/L}‖_F)`.
pub fn check_nfa_exact(stack: &LinearStack, tol: f64) -> Result<NfaVerdict> {
    if stack.depth() < 2 {
        return Err(Error::TooShallow(stack.depth()));
    }
    let feature = neural_feature_matrix(stack);
    let root = psd_power(&checked_eig(&agop_linear(stack))?, 1.0 / stack.depth() as f64);
    let frobenius_gap = feature.sub(&root)?.frobenius_norm();
    let bound_value = tol * (1.0 + root.frobenius_norm());
    Ok(NfaVerdict {
        cosine: cosine_similarity(&feature, &root)?,
        frobenius_gap,
        bound_value,
        satisfied: frobenius_gap <= bound_value,
    })
}

/// Alignment quantities for one snapshot of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// `cos(W₁ᵀW₁, A^{1/L})`.
    pub cos_inv_l: f64,
    /// `‖A − (W₁ᵀW₁)^L‖_F`.
    pub gap_power: f64,
    /// `‖A^{1/L} − W₁ᵀW₁‖_F`.
    pub gap_root: f64,
    /// Right-hand side of the root-gap bound applied to `A` and `(W₁ᵀW₁)^L`.
    pub root_gap_bound: f64,
}

/// The AGOP the alignment diagnostics compare against: the linear part's
/// `JᵀJ` for linear and ReLU-head models, the empirical AGOP over the data
/// for feed-forward models.
pub fn reference_agop(net: &Network, inputs: &Matrix) -> Result<Matrix> {
    match net.head() {
        Head::Feedforward { .. } => agop_empirical(net, inputs),
        _ => Ok(agop_linear(net.stack())),
    }
}

pub fn snapshot(feature: &Matrix, agop: &Matrix, depth: usize) -> Result<Snapshot> {
    let eig = checked_eig(agop)?;
    let root = psd_power(&eig, 1.0 / depth as f64);
    let power = matrix_int_power(feature, depth as u32)?;
    let power_gap = agop.sub(&power)?;
    let gap_power = power_gap.frobenius_norm();
    let d = feature.rows() as f64;
    let l = depth as f64;
    Ok(Snapshot {
        cos_inv_l: cosine_similarity(feature, &root)?,
        gap_power,
        gap_root: root.sub(feature)?.frobenius_norm(),
        root_gap_bound: d.powf((l - 1.0) / (2.0 * l)) * gap_power.powf(1.0 / l),
    })
}

/// Per-record history of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTrace {
    pub depth: usize,
    pub epochs: Vec<usize>,
    /// Continuous time at each record.
    pub flow_time: Vec<f64>,
    pub loss: Vec<f64>,
    pub cos_inv_l: Vec<f64>,
    /// Balancedness defects, one row per record with `L − 1` entries.
    pub defects: Vec<Vec<f64>>,
    pub gap_power: Vec<f64>,
    pub gap_root: Vec<f64>,
    pub root_gap_bound: Vec<f64>,
    /// Scaled exponents `α̃` of the optional per-record sweep.
    pub alpha_tilde_grid: Vec<f64>,
    /// Cosines over `alpha_tilde_grid`, one row per record (empty if disabled).
    pub alpha_cosines: Vec<Vec<f64>>,
    /// Epoch at which training produced a non-finite value, if it did.
    pub diverged_at: Option<usize>,
}

impl AlignmentTrace {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Defect of pair `l` (0-based) across records.
    pub fn defect_series(&self, pair: usize) -> Vec<f64> {
        self.defects.iter().map(|row| row[pair]).collect()
    }

    /// Appends one record computed from `net`.
    pub fn push(&mut self, epoch: usize, flow_time: f64, net: &Network, data: &Dataset) -> Result<()> {
        let stack = net.stack();
        self.depth = stack.depth();
        let feature = neural_feature_matrix(stack);
        let agop = reference_agop(net, &data.inputs)?;
        let snap = snapshot(&feature, &agop, stack.depth())?;
        self.epochs.push(epoch);
        self.flow_time.push(flow_time);
        self.loss.push(mse_loss(net, data)?);
        self.cos_inv_l.push(snap.cos_inv_l);
        self.defects.push(if stack.depth() >= 2 { balance_report(stack)?.defects } else { Vec::new() });
        self.gap_power.push(snap.gap_power);
        self.gap_root.push(snap.gap_root);
        self.root_gap_bound.push(snap.root_gap_bound);
        if !self.alpha_tilde_grid.is_empty() {
            let l = stack.depth() as f64;
            let alphas: Vec<f64> = self.alpha_tilde_grid.iter().map(|at| at / l).collect();
            let row = alpha_sweep_against(&feature, &agop, &alphas)?;
            self.alpha_cosines.push(row.iter().map(|p| p.cosine).collect());
        }
        Ok(())
    }
}

/// Monitor that fills an [`AlignmentTrace`].
#[derive(Debug, Clone, Default)]
pub struct TraceRecorder {
    pub trace: AlignmentTrace,
}

impl TraceRecorder {
    pub fn new() -> Self {
        TraceRecorder::default()
    }

    /// Also records a sweep over these scaled exponents at every record.
    pub fn with_alpha_grid(alpha_tilde: Vec<f64>) -> Self {
        TraceRecorder { trace: AlignmentTrace { alpha_tilde_grid: alpha_tilde, ..AlignmentTrace::default() } }
    }
}

impl Monitor for TraceRecorder {
    fn record(&mut self, state: &TrainState, data: &Dataset) -> Result<()> {
        self.trace.push(state.epoch, state.flow_time, &state.net, data)
    }

    fn diverged(&mut self, epoch: usize) {
        self.trace.diverged_at = Some(epoch);
    }
}

/// Least-squares slope of `ln(values)` against `times` over the recorded
/// window `[20%, 90%]`, ignoring values below [`FIT_FLOOR`]. `None` when fewer
/// than two usable points remain.
pub fn fit_decay_rate(times: &[f64], values: &[f64]) -> Option<f64> {
    let n = times.len().min(values.len());
    let start = (FIT_START * n as f64).floor() as usize;
    let end = ((FIT_END * n as f64).ceil() as usize).min(n);
    let pts: Vec<(f64, f64)> = (start..end)
        .filter(|&i| values[i] >= FIT_FLOOR && values[i].is_finite())
        .map(|i| (times[i], values[i].ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let (mt, my) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / k, b + y / k));
    let (sty, stt) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + (t - mt) * (y - my), b + (t - mt) * (t - mt)));
    (stt > 0.0).then(|| sty / stt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticVerdict {
    /// Fitted slope of `ln‖A − (W₁ᵀW₁)^L‖_F` against time.
    pub power_rate: Option<f64>,
    /// Fitted slope of `ln‖A^{1/L} − W₁ᵀW₁‖_F` against time.
    pub root_rate: Option<f64>,
    /// `−2λ`.
    pub expected_power_rate: f64,
    /// `−2λ/L`.
    pub expected_root_rate: f64,
    /// The gap was already at round-off level, so no rate was fitted.
    pub degenerate: bool,
    pub power_satisfied: bool,
    pub root_satisfied: bool,
}

impl AsymptoticVerdict {
    pub fn satisfied(&self) -> bool {
        self.power_satisfied && self.root_satisfied
    }
}

/// Fits the decay rates of both gaps and checks that each decays at least
/// 90% as fast as its predicted rate.
pub fn check_nfa_asymptotic(trace: &AlignmentTrace, weight_decay: f64, depth: usize) -> Result<AsymptoticVerdict> {
    if !(weight_decay > 0.0) {
        return Err(Error::InsufficientDecay(weight_decay));
    }
    if trace.len() < MIN_TRACE_POINTS {
        return Err(Error::InsufficientTrace { got: trace.len(), need: MIN_TRACE_POINTS });
    }
    let expected_power_rate = -2.0 * weight_decay;
    let expected_root_rate = expected_power_rate / depth as f64;
    let degenerate = trace.gap_power[0] <= 1e-8;
    let (power_rate, root_rate) = if degenerate {
        (None, None)
    } else {
        (fit_decay_rate(&trace.flow_time, &trace.gap_power), fit_decay_rate(&trace.flow_time, &trace.gap_root))
    };
    let meets = |rate: Option<f64>, expected: f64| degenerate || rate.is_some_and(|r| r <= 0.9 * expected);
    Ok(AsymptoticVerdict {
        power_rate,
        root_rate,
        expected_power_rate,
        expected_root_rate,
        degenerate,
        power_satisfied: meets(power_rate, expected_power_rate),
        root_satisfied: meets(root_rate, expected_root_rate),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootGapCheck {
    /// `‖X^{1/L} − Y^{1/L}‖_F`.
    pub gap: f64,
    /// `d^{(L−1)/(2L)} ‖X − Y‖_F^{1/L}`.
    pub bound: f64,
}

impl RootGapCheck {
    pub fn holds(&self) -> bool {
        self.gap <= self.bound * (1.0 + 1e-12) + 1e-14
    }
}

/// Bounds the distance between `L`-th roots of two PSD matrices by the
/// `L`-th root of their distance.
pub fn wihler_gap_bound(x: &Matrix, y: &Matrix, depth: usize) -> Result<RootGapCheck> {
    if depth == 0 {
        return Err(Error::InvalidArgument("root order must be at least 1".into()));
    }
    let l = depth as f64;
    let (ex, ey) = (checked_eig(x)?, checked_eig(y)?);
    let diff = x.sub(y)?.frobenius_norm();
    let gap = psd_power(&ex, 1.0 / l).sub(&psd_power(&ey, 1.0 / l))?.frobenius_norm();
    let d = x.rows() as f64;
    Ok(RootGapCheck { gap, bound: d.powf((l - 1.0) / (2.0 * l)) * diff.powf(1.0 / l) })
}

/// `√((2/λ)(L(θ₀) + (λ/2)Σ‖W_l‖²))`: bounds every decayed parameter block's
/// norm along a weight-decayed descent path starting at `net`.
pub fn cf_bound(net: &Network, data: &Dataset, weight_decay: f64) -> Result<f64> {
    if !(weight_decay > 0.0) {
        return Err(Error::InsufficientDecay(weight_decay));
    }
    let loss = mse_loss(net, data)?;
    let mut net = net.clone();
    let sq: f64 = net
        .parameter_blocks_mut()
        .into_iter()
        .filter(|(_, decays)| *decays)
        .map(|(block, _)| block.iter().map(|v| v * v).sum::<f64>())
        .sum();
    Ok(((2.0 / weight_decay) * (loss + 0.5 * weight_decay * sq)).sqrt())
}

/// `‖D_{l+1} − D_l‖_F` for `l = 1..L−1`, where
/// `D_l = P_{l−1}ᵀ (W_lᵀW_l)^{L−l+1} P_{l−1}` and `P_k = W_k⋯W_1`.
/// `D_1 = (W₁ᵀW₁)^L` and `D_L = A`, so the gaps telescope across the
/// power gap.
pub fn telescope_defects(stack: &LinearStack) -> Result<Vec<f64>> {
    let depth = stack.depth();
    if depth < 2 {
        return Err(Error::TooShallow(depth));
    }
    let prefixes = stack.prefix_products();
    let terms: Vec<Matrix> = (0..depth)
        .map(|l| {
            let inner = matrix_int_power(&stack.weight(l).gram(), (depth - l) as u32)?;
            if l == 0 {
                Ok(inner)
            } else {
                let p = &prefixes[l - 1];
                p.t_matmul(&inner.matmul(p)?)
            }
        })
        .collect::<Result<_>>()?;
    Ok(terms.windows(2).map(|w| w[1].sub(&w[0]).expect("same shape").frobenius_norm()).collect())
}

/// Bound on the `l`-th telescoping gap (1-based) at time `t`:
/// `2^{L−l} e^{−2λt} c_max Ĉ^{2(L−l)}` with `Ĉ = max(C_F, 1)`.
pub fn telescope_bound(l: usize, depth: usize, weight_decay: f64, t: f64, c_max: f64, cf: f64) -> f64 {
    let k = (depth - l) as f64;
    let c_hat = cf.max(1.0);
    2f64.powf(k) * (-2.0 * weight_decay * t).exp() * c_max * c_hat.powf(2.0 * k)
}
