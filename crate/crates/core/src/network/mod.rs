//! Model definitions: deep linear stacks, the ReLU-head and generic
//! feed-forward variants, analytic gradients and AGOP computation.

mod backprop;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub use backprop::{
    agop_empirical, agop_linear, end_to_end_jacobian, input_gradient, mse_loss,
    neural_feature_matrix, parameter_gradients, Differentiable, GradientSet,
};
pub(crate) use backprop::{loss_and_gradients, LinearMoments};

/// Weights `W₁..W_L` (layer `l` maps `R^{d_l}` to `R^{d_{l+1}}`) and an
/// optional bias `b₁` added after the last layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStack", into = "RawStack")]
pub struct LinearStack {
    weights: Vec<Matrix>,
    bias1: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStack {
    weights: Vec<Matrix>,
    #[serde(default)]
    bias1: Option<Vec<f64>>,
}

impl TryFrom<RawStack> for LinearStack {
    type Error = Error;

    fn try_from(raw: RawStack) -> Result<Self> {
        LinearStack::new(raw.weights, raw.bias1)
    }
}

impl From<LinearStack> for RawStack {
    fn from(s: LinearStack) -> Self {
        RawStack { weights: s.weights, bias1: s.bias1 }
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

impl LinearStack {
    pub fn new(weights: Vec<Matrix>, bias1: Option<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::ShapeError("a stack needs at least one layer".into()));
        }
        for (l, pair) in weights.windows(2).enumerate() {
            if pair[0].rows() != pair[1].cols() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} outputs {} values but layer {} expects {}",
                    l + 1,
                    pair[0].rows(),
                    l + 2,
                    pair[1].cols()
                )));
            }
        }
        for w in &weights {
            if !w.is_finite() {
                return Err(Error::NonFinite);
            }
        }
        let out = weights.last().map(Matrix::rows).unwrap_or(0);
        if let Some(b) = &bias1 {
            if b.len() != out {
                return Err(Error::ShapeMismatch(format!(
                    "bias of length {} after a layer with {out} outputs",
                    b.len()
                )));
            }
            check_finite(b)?;
        }
        Ok(LinearStack { weights, bias1 })
    }

    /// Number of weight matrices `L`.
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.depth() - 1].rows()
    }

    /// Layer widths `d_1, …, d_{L+1}` (input first).
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.weights.iter().map(Matrix::rows)).collect()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weight(&self, l: usize) -> &Matrix {
        &self.weights[l]
    }

    pub fn bias1(&self) -> Option<&[f64]> {
        self.bias1.as_deref()
    }

    pub fn into_parts(self) -> (Vec<Matrix>, Option<Vec<f64>>) {
        (self.weights, self.bias1)
    }

    /// `P_l = W_l ⋯ W_1` for `l = 1..L`; the last entry is the end-to-end map.
    pub(crate) fn prefix_products(&self) -> Vec<Matrix> {
        let mut out: Vec<Matrix> = Vec::with_capacity(self.depth());
        for w in &self.weights {
            let next = match out.last() {
                Some(p) => w.matmul(p).expect("stack shapes conform"),
                None => w.clone(),
            };
            out.push(next);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.bias1.as_ref().is_none_or(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// What sits on top of the linear stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Head {
    /// Multivariate linear output `W_L⋯W₁x + b₁`.
    None,
    /// `aᵀ[W_L⋯W₁x + b₁]₊ + b₂`.
    Relu { a: Vec<f64>, b2: f64 },
    /// Every layer has its own bias and all but the last are followed by a ReLU.
    Feedforward { biases: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork", into = "RawNetwork")]
pub struct Network {
    stack: LinearStack,
    head: Head,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    stack: LinearStack,
    head: Head,
}

impl TryFrom<RawNetwork> for Network {
    type Error = Error;

    fn try_from(raw: RawNetwork) -> Result<Self> {
        Network::new(raw.stack, raw.head)
    }
}

impl From<Network> for RawNetwork {
    fn from(n: Network) -> Self {
        RawNetwork { stack: n.stack, head: n.head }
    }
}

impl Network {
    pub fn new(stack: LinearStack, head: Head) -> Result<Self> {
        match &head {
            Head::None => {}
            Head::Relu { a, b2 } => {
                if a.len() != stack.output_dim() {
                    return Err(Error::ShapeMismatch(format!(
                        "head vector of length {} on a stack with {} outputs",
                        a.len(),
                        stack.output_dim()
                    )));
                }
                check_finite(a)?;
                check_finite(std::slice::from_ref(b2))?;
            }
            Head::Feedforward { biases } => {
                if stack.bias1().is_some() {
                    return Err(Error::ShapeMismatch(
                        "feed-forward networks carry per-layer biases, not b1".into(),
                    ));
                }
                if biases.len() != stack.depth() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} biases for {} layers",
                        biases.len(),
                        stack.depth()
                    )));
                }
                for (l, (b, w)) in biases.iter().zip(stack.weights()).enumerate() {
                    if b.len() != w.rows() {
                        return Err(Error::ShapeMismatch(format!(
                            "bias {} has length {} but layer has {} outputs",
                            l + 1,
                            b.len(),
                            w.rows()
                        )));
                    }
                    check_finite(b)?;
                }
            }
        }
        Ok(Network { stack, head })
    }

    pub fn linear(stack: LinearStack) -> Self {
        Network { stack, head: Head::None }
    }

    pub fn stack(&self) -> &LinearStack {
        &self.stack
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn into_parts(self) -> (LinearStack, Head) {
        (self.stack, self.head)
    }

    pub fn input_dim(&self) -> usize {
        self.stack.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        match self.head {
            Head::Relu { .. } => 1,
            _ => self.stack.output_dim(),
        }
    }

    /// Evaluates the model; scalar-output models return a length-1 vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input of length {} for a network on R^{}",
                x.len(),
                self.input_dim()
            )));
        }
        match &self.head {
            Head::None => Ok(self.linear_part(x)),
            Head::Relu { a, b2 } => {
                let z = self.linear_part(x);
                Ok(vec![a.iter().zip(&z).map(|(ai, zi)| ai * zi.max(0.0)).sum::<f64>() + b2])
            }
            Head::Feedforward { biases } => {
                let mut h = x.to_vec();
                let last = self.stack.depth() - 1;
                for (l, (w, b)) in self.stack.weights().iter().zip(biases).enumerate() {
                    let mut z = w.matvec(&h)?;
                    for (zi, bi) in z.iter_mut().zip(b) {
                        *zi += bi;
                        if l < last {
                            *zi = zi.max(0.0);
                        }
                    }
                    h = z;
                }
                Ok(h)
            }
        }
    }

    /// `W_L⋯W₁x + b₁` evaluated layer by layer.
    pub fn linear_part(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for w in self.stack.weights() {
            h = w.matvec(&h).expect("stack shapes conform");
        }
        if let Some(b) = self.stack.bias1() {
            h.iter_mut().zip(b).for_each(|(hi, bi)| *hi += bi);
        }
        h
    }

    pub fn is_finite(&self) -> bool {
        self.stack.is_finite()
            && match &self.head {
                Head::None => true,
                Head::Relu { a, b2 } => b2.is_finite() && a.iter().all(|v| v.is_finite()),
                Head::Feedforward { biases } => biases.iter().flatten().all(|v| v.is_finite()),
            }
    }

    /// Mutable views of every parameter block, paired with whether weight
    /// decay applies to it. Order matches [`GradientSet::blocks`].
    pub(crate) fn parameter_blocks_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let mut out: Vec<(&mut [f64], bool)> = Vec::new();
        let Network { stack, head } = self;
        let LinearStack { weights, bias1 } = stack;
        for w in weights.iter_mut() {
            out.push((w.as_mut_slice(), true));
        }
        if let Some(b) = bias1 {
            out.push((b.as_mut_slice(), false));
        }
        match head {
            Head::None => {}
            Head::Relu { a, b2 } => {
                out.push((a.as_mut_slice(), true));
                out.push((std::slice::from_mut(b2), false));
            }
            Head::Feedforward { biases } => {
                for b in biases.iter_mut() {
                    out.push((b.as_mut_slice(), false));
                }
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        let mut n: usize = self.stack.weights().iter().map(|w| w.rows() * w.cols()).sum();
        n += self.stack.bias1().map_or(0, <[f64]>::len);
        n += match &self.head {
            Head::None => 0,
            Head::Relu { a, .. } => a.len() + 1,
            Head::Feedforward { biases } => biases.iter().map(Vec::len).sum(),
        };
        n
    }

    /// Writes a JSON checkpoint; 64-bit values round-trip exactly.
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
