use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::targets::Dataset;

use super::{Head, LinearStack, Network};

/// A model whose input Jacobian is available in closed form.
///
/// The Jacobian has one row per output coordinate, so scalar models return a
/// `1×d` matrix.
pub trait Differentiable {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn jacobian(&self, x: &[f64]) -> Result<Matrix>;
}

impl Differentiable for Network {
    fn input_dim(&self) -> usize {
        Network::input_dim(self)
    }

    fn output_dim(&self) -> usize {
        Network::output_dim(self)
    }

    fn value(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x)
    }

    fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        if x.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input of length {} for a network on R^{}",
                x.len(),
                self.input_dim()
            )));
        }
        let stack = self.stack();
        match self.head() {
            Head::None => Ok(end_to_end_jacobian(stack)),
            Head::Relu { a, .. } => {
                let z = self.linear_part(x);
                let upstream: Vec<f64> =
                    a.iter().zip(&z).map(|(ai, zi)| if *zi > 0.0 { *ai } else { 0.0 }).collect();
                let j = end_to_end_jacobian(stack);
                Ok(Matrix::from_vec(1, x.len(), j.t_matvec(&upstream)?)?)
            }
            Head::Feedforward { biases } => {
                // Forward pass to record the active units of each hidden layer.
                let depth = stack.depth();
                let mut masks: Vec<Vec<bool>> = Vec::with_capacity(depth - 1);
                let mut h = x.to_vec();
                for (w, b) in stack.weights()[..depth - 1].iter().zip(biases) {
                    let mut z = w.matvec(&h)?;
                    z.iter_mut().zip(b).for_each(|(zi, bi)| *zi += bi);
                    masks.push(z.iter().map(|&v| v > 0.0).collect());
                    h = z.into_iter().map(|v| v.max(0.0)).collect();
                }
                // Accumulate from the output side: J ← J · D_l · W_l.
                let mut jac = stack.weight(depth - 1).clone();
                for l in (0..depth - 1).rev() {
                    for r in 0..jac.rows() {
                        for (c, &on) in masks[l].iter().enumerate() {
                            if !on {
                                jac[(r, c)] = 0.0;
                            }
                        }
                    }
                    jac = jac.matmul(stack.weight(l))?;
                }
                Ok(jac)
            }
        }
    }
}

/// The product `W_L ⋯ W₁`.
pub fn end_to_end_jacobian(stack: &LinearStack) -> Matrix {
    stack.prefix_products().pop().expect("stacks are never empty")
}

/// `JᵀJ` for the end-to-end map `J` of a linear stack.
pub fn agop_linear(stack: &LinearStack) -> Matrix {
    end_to_end_jacobian(stack).gram()
}

/// `W₁ᵀW₁`.
pub fn neural_feature_matrix(stack: &LinearStack) -> Matrix {
    stack.weight(0).gram()
}

/// `(1/N) Σ J(x_i)ᵀ J(x_i)` over the rows of `xs`.
pub fn agop_empirical<F: Differentiable + ?Sized>(f: &F, xs: &Matrix) -> Result<Matrix> {
    if xs.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let d = f.input_dim();
    if xs.cols() != d {
        return Err(Error::ShapeMismatch(format!(
            "inputs have {} columns for a model on R^{d}",
            xs.cols()
        )));
    }
    let mut acc = Matrix::zeros(d, d);
    for i in 0..xs.rows() {
        let j = f.jacobian(xs.row(i))?;
        if j.rows() == 1 {
            let g = j.row(0);
            for r in 0..d {
                if g[r] == 0.0 {
                    continue;
                }
                let row = acc.row_mut(r);
                for (o, gc) in row.iter_mut().zip(g) {
                    *o += g[r] * gc;
                }
            }
        } else {
            acc.axpy(1.0, &j.gram())?;
        }
    }
    acc.scale_in_place(1.0 / xs.rows() as f64);
    Ok(acc.symmetrized())
}

/// `∇ₓf(x)` for a scalar-output network.
pub fn input_gradient(net: &Network, x: &[f64]) -> Result<Vec<f64>> {
    if net.output_dim() != 1 || matches!(net.head(), Head::None) {
        return Err(Error::NonScalarOutput);
    }
    Ok(net.jacobian(x)?.into_vec())
}

/// `(1/N) Σ ‖f(x_i) − y_i‖²`.
pub fn mse_loss(net: &Network, data: &Dataset) -> Result<f64> {
    check_data(net, data)?;
    let mut total = 0.0;
    for i in 0..data.len() {
        let out = net.forward(data.x(i))?;
        total += out.iter().zip(data.y(i)).map(|(f, y)| (f - y) * (f - y)).sum::<f64>();
    }
    Ok(total / data.len() as f64)
}

/// Exact gradient of [`mse_loss`] over `batch` for every parameter.
pub fn parameter_gradients(net: &Network, batch: &Dataset) -> Result<GradientSet> {
    loss_and_gradients(net, batch, None).map(|(_, g)| g)
}

fn check_data(net: &Network, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.input_dim() != net.input_dim() || data.output_dim() != net.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "dataset maps R^{} to R^{} but the network maps R^{} to R^{}",
            data.input_dim(),
            data.output_dim(),
            net.input_dim(),
            net.output_dim()
        )));
    }
    Ok(())
}

/// Gradients laid out like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub bias1: Option<Vec<f64>>,
    /// Head vector `a` (ReLU head only).
    pub head_vector: Option<Vec<f64>>,
    /// Output bias `b₂` (ReLU head only).
    pub head_bias: Option<f64>,
    /// Per-layer biases (feed-forward only).
    pub layer_biases: Vec<Vec<f64>>,
}

impl GradientSet {
    /// Flat views in the same order as the network's parameter blocks.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.weights.iter().map(Matrix::as_slice).collect();
        if let Some(b) = &self.bias1 {
            out.push(b);
        }
        if let Some(a) = &self.head_vector {
            out.push(a);
        }
        if let Some(b2) = &self.head_bias {
            out.push(std::slice::from_ref(b2));
        }
        out.extend(self.layer_biases.iter().map(Vec::as_slice));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        self.blocks().iter().flat_map(|b| b.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Second moments of a dataset, enough to evaluate the loss and gradients of
/// a purely linear model without touching the individual samples.
#[derive(Debug, Clone)]
pub(crate) struct LinearMoments {
    xx: Matrix,
    x_mean: Vec<f64>,
    yx: Matrix,
    y_mean: Vec<f64>,
    yy: f64,
}

impl LinearMoments {
    pub(crate) fn new(data: &Dataset) -> Self {
        let n = data.len() as f64;
        let xs = &data.inputs;
        let ys = &data.targets;
        let mut xx = xs.gram();
        xx.scale_in_place(1.0 / n);
        let mut yx = ys.t_matmul(xs).expect("same row count");
        yx.scale_in_place(1.0 / n);
        let mean = |m: &Matrix| -> Vec<f64> {
            (0..m.cols()).map(|c| (0..m.rows()).map(|r| m[(r, c)]).sum::<f64>() / n).collect()
        };
        let yy = ys.as_slice().iter().map(|v| v * v).sum::<f64>() / n;
        LinearMoments { x_mean: mean(xs), y_mean: mean(ys), xx, yx, yy }
    }
}

/// Loss and gradients over a batch. With `moments`, a linear-output network
/// is handled from the batch's second moments alone.
pub(crate) fn loss_and_gradients(
    net: &Network,
    batch: &Dataset,
    moments: Option<&LinearMoments>,
) -> Result<(f64, GradientSet)> {
    check_data(net, batch)?;
    match (net.head(), moments) {
        (Head::None, Some(m)) => Ok(linear_from_moments(net.stack(), m)),
        (Head::None, None) => linear_direct(net.stack(), batch),
        (Head::Relu { a, b2 }, _) => relu_head(net.stack(), a, *b2, batch),
        (Head::Feedforward { biases }, _) => feedforward(net.stack(), biases, batch),
    }
}

/// Backpropagates `∂L/∂(W_L⋯W₁) = g_end` into every layer.
fn chain_gradients(stack: &LinearStack, prefixes: &[Matrix], g_end: Matrix) -> Vec<Matrix> {
    let depth = stack.depth();
    let mut grads = vec![Matrix::zeros(0, 0); depth];
    let mut upstream = g_end;
    for l in (1..depth).rev() {
        grads[l] = upstream.matmul_t(&prefixes[l - 1]).expect("stack shapes conform");
        upstream = stack.weight(l).t_matmul(&upstream).expect("stack shapes conform");
    }
    grads[0] = upstream;
    grads
}

fn linear_from_moments(stack: &LinearStack, m: &LinearMoments) -> (f64, GradientSet) {
    let prefixes = stack.prefix_products();
    let p = prefixes.last().expect("nonempty");
    let p_xx = p.matmul(&m.xx).expect("shapes conform");
    let p_mean = p.matvec(&m.x_mean).expect("shapes conform");

    let mut loss = p_xx.frobenius_dot(p).expect("same shape") - 2.0 * p.frobenius_dot(&m.yx).expect("same shape") + m.yy;
    let mut g_end = p_xx.sub(&m.yx).expect("same shape");
    let mut bias_grad = None;
    if let Some(b) = stack.bias1() {
        let mut gb = Vec::with_capacity(b.len());
        for i in 0..b.len() {
            loss += 2.0 * b[i] * p_mean[i] + b[i] * b[i] - 2.0 * b[i] * m.y_mean[i];
            gb.push(2.0 * (p_mean[i] + b[i] - m.y_mean[i]));
            let row = g_end.row_mut(i);
            for (o, xm) in row.iter_mut().zip(&m.x_mean) {
                *o += b[i] * xm;
            }
        }
        bias_grad = Some(gb);
    }
    g_end.scale_in_place(2.0);
    let weights = chain_gradients(stack, &prefixes, g_end);
    let grads = GradientSet {
        weights,
        bias1: bias_grad,
        head_vector: None,
        head_bias: None,
        layer_biases: Vec::new(),
    };
    (loss.max(0.0), grads)
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        out.iter_mut().zip(m.row(r)).for_each(|(o, v)| *o += v);
    }
    out
}

fn linear_direct(stack: &LinearStack, batch: &Dataset) -> Result<(f64, GradientSet)> {
    let n = batch.len() as f64;
    let prefixes = stack.prefix_products();
    let p = prefixes.last().expect("nonempty");
    // Residuals R = X Pᵀ + b − Y, one row per sample.
    let mut resid = batch.inputs.matmul_t(p)?;
    for r in 0..resid.rows() {
        let row = resid.row_mut(r);
        if let Some(b) = stack.bias1() {
            row.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
        }
        row.iter_mut().zip(batch.y(r)).for_each(|(v, y)| *v -= y);
    }
    let loss = resid.as_slice().iter().map(|v| v * v).sum::<f64>() / n;
    resid.scale_in_place(2.0 / n);
    let g_end = resid.t_matmul(&batch.inputs)?;
    let bias1 = stack.bias1().map(|_| column_sums(&resid));
    let weights = chain_gradients(stack, &prefixes, g_end);
    Ok((loss, GradientSet { weights, bias1, head_vector: None, head_bias: None, layer_biases: Vec::new() }))
}

fn relu_head(stack: &LinearStack, a: &[f64], b2: f64, batch: &Dataset) -> Result<(f64, GradientSet)> {
    let n = batch.len() as f64;
    let prefixes = stack.prefix_products();
    let p = prefixes.last().expect("nonempty");
    let mut z = batch.inputs.matmul_t(p)?;
    if let Some(b) = stack.bias1() {
        for r in 0..z.rows() {
            z.row_mut(r).iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
        }
    }
    let mut loss = 0.0;
    let mut grad_a = vec![0.0; a.len()];
    let mut grad_b2 = 0.0;
    // Reuse z's storage for ∂L/∂z once each row has been consumed.
    for r in 0..z.rows() {
        let row = z.row_mut(r);
        let out: f64 = row.iter().zip(a).map(|(zi, ai)| ai * zi.max(0.0)).sum::<f64>() + b2;
        let err = out - batch.y(r)[0];
        loss += err * err;
        let scale = 2.0 * err / n;
        grad_b2 += scale;
        for ((zi, ai), ga) in row.iter_mut().zip(a).zip(grad_a.iter_mut()) {
            if *zi > 0.0 {
                *ga += scale * *zi;
                *zi = scale * ai;
            } else {
                *zi = 0.0;
            }
        }
    }
    let g_end = z.t_matmul(&batch.inputs)?;
    let bias1 = stack.bias1().map(|_| column_sums(&z));
    let weights = chain_gradients(stack, &prefixes, g_end);
    Ok((
        loss / n,
        GradientSet {
            weights,
            bias1,
            head_vector: Some(grad_a),
            head_bias: Some(grad_b2),
            layer_biases: Vec::new(),
        },
    ))
}

fn feedforward(stack: &LinearStack, biases: &[Vec<f64>], batch: &Dataset) -> Result<(f64, GradientSet)> {
    let n = batch.len() as f64;
    let depth = stack.depth();
    // activations[l] is the input to layer l (activations[0] = X).
    let mut activations: Vec<Matrix> = Vec::with_capacity(depth);
    activations.push(batch.inputs.clone());
    let mut out = Matrix::zeros(0, 0);
    for (l, (w, b)) in stack.weights().iter().zip(biases).enumerate() {
        let mut z = activations[l].matmul_t(w)?;
        for r in 0..z.rows() {
            z.row_mut(r).iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
        }
        if l + 1 < depth {
            z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            activations.push(z);
        } else {
            out = z;
        }
    }
    let mut delta = out.sub(&batch.targets)?;
    let loss = delta.as_slice().iter().map(|v| v * v).sum::<f64>() / n;
    delta.scale_in_place(2.0 / n);

    let mut weights = vec![Matrix::zeros(0, 0); depth];
    let mut layer_biases = vec![Vec::new(); depth];
    for l in (0..depth).rev() {
        weights[l] = delta.t_matmul(&activations[l])?;
        layer_biases[l] = column_sums(&delta);
        if l > 0 {
            let mut back = delta.matmul(stack.weight(l))?;
            // A hidden unit is active exactly when its post-ReLU value is positive.
            for (v, h) in back.as_mut_slice().iter_mut().zip(activations[l].as_slice()) {
                if *h <= 0.0 {
                    *v = 0.0;
                }
            }
            delta = back;
        }
    }
    Ok((loss, GradientSet { weights, bias1: None, head_vector: None, head_bias: None, layer_biases }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random(rows: usize, cols: usize, rng: &mut crate::SeededRng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_stack(widths: &[usize], bias: bool, rng: &mut crate::SeededRng) -> LinearStack {
        let weights = widths.windows(2).map(|w| random(w[1], w[0], rng)).collect();
        let bias1 = bias.then(|| (0..*widths.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect());
        LinearStack::new(weights, bias1).unwrap()
    }

    #[test]
    fn jacobian_examples() {
        let w = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let single = LinearStack::new(vec![w.clone()], None).unwrap();
        assert_eq!(end_to_end_jacobian(&single), w);
        let stack = LinearStack::new(vec![Matrix::identity(2), m(&[&[1.0, 1.0]])], None).unwrap();
        assert_eq!(end_to_end_jacobian(&stack), m(&[&[1.0, 1.0]]));
        assert_eq!(agop_linear(&stack), m(&[&[1.0, 1.0], &[1.0, 1.0]]));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = seeded(11);
        let stack = random_stack(&[3, 5, 4, 6, 2], false, &mut rng);
        let net = Network::linear(stack.clone());
        let x = [0.3, -0.7, 0.2];
        let j = end_to_end_jacobian(&stack);
        let h = 1e-5;
        for c in 0..3 {
            let (mut xp, mut xm) = (x, x);
            xp[c] += h;
            xm[c] -= h;
            let (fp, fm) = (net.forward(&xp).unwrap(), net.forward(&xm).unwrap());
            for r in 0..2 {
                assert!(((fp[r] - fm[r]) / (2.0 * h) - j[(r, c)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn agop_quadratic_form_identity() {
        let mut rng = seeded(12);
        let stack = random_stack(&[4, 6, 3], false, &mut rng);
        let a = agop_linear(&stack);
        let j = end_to_end_jacobian(&stack);
        for _ in 0..100 {
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q = crate::linalg::dot(&z, &a.matvec(&z).unwrap());
            let jz = j.matvec(&z).unwrap();
            let direct = crate::linalg::dot(&jz, &jz);
            assert!((q - direct).abs() <= 1e-10 * direct.max(1e-300));
        }
    }

    #[test]
    fn feature_matrix_of_widened_net() {
        let w = m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let stack = LinearStack::new(vec![w], None).unwrap();
        assert_eq!(neural_feature_matrix(&stack), m(&[&[2.0, 1.0], &[1.0, 2.0]]));
    }

    #[test]
    fn relu_head_input_gradient_is_indicator() {
        let stack = LinearStack::new(vec![Matrix::identity(2)], Some(vec![0.0, 0.0])).unwrap();
        let net = Network::new(stack, Head::Relu { a: vec![1.0, 1.0], b2: 0.0 }).unwrap();
        assert_eq!(input_gradient(&net, &[2.0, -1.0]).unwrap(), vec![1.0, 0.0]);
        let linear = Network::linear(LinearStack::new(vec![Matrix::identity(2)], None).unwrap());
        assert!(matches!(input_gradient(&linear, &[1.0, 1.0]), Err(Error::NonScalarOutput)));
    }

    #[test]
    fn empirical_agop_of_linear_stack_is_constant() {
        let mut rng = seeded(13);
        let stack = random_stack(&[3, 4, 2], true, &mut rng);
        let net = Network::linear(stack.clone());
        let xs = random(50, 3, &mut rng);
        let emp = agop_empirical(&net, &xs).unwrap();
        assert!(emp.sub(&agop_linear(&stack)).unwrap().max_abs() < 1e-10);
        assert!(matches!(agop_empirical(&net, &Matrix::zeros(0, 3)), Err(Error::EmptyDataset)));
    }

    #[test]
    fn mse_examples() {
        let net = Network::linear(LinearStack::new(vec![Matrix::zeros(1, 2)], None).unwrap());
        let data = Dataset::new(Matrix::zeros(4, 2), Matrix::from_vec(4, 1, vec![1.0; 4]).unwrap()).unwrap();
        assert_eq!(mse_loss(&net, &data).unwrap(), 1.0);
        let bad = Dataset::new(Matrix::zeros(4, 2), Matrix::zeros(4, 2)).unwrap();
        assert!(matches!(mse_loss(&net, &bad), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn single_layer_scalar_gradient() {
        let w = m(&[&[0.5, -1.0, 2.0]]);
        let net = Network::linear(LinearStack::new(vec![w.clone()], None).unwrap());
        let x = [1.0, 2.0, -0.5];
        let y = 0.25;
        let data = Dataset::new(Matrix::from_vec(1, 3, x.to_vec()).unwrap(), Matrix::from_vec(1, 1, vec![y]).unwrap()).unwrap();
        let g = parameter_gradients(&net, &data).unwrap();
        let pred: f64 = w.row(0).iter().zip(&x).map(|(a, b)| a * b).sum();
        let expect: Vec<f64> = x.iter().map(|xi| 2.0 * (pred - y) * xi).collect();
        for (got, want) in g.weights[0].as_slice().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn moments_path_agrees_with_direct() {
        let mut rng = seeded(14);
        let stack = random_stack(&[4, 6, 5, 3], true, &mut rng);
        let net = Network::linear(stack);
        let data = Dataset::new(random(40, 4, &mut rng), random(40, 3, &mut rng)).unwrap();
        let moments = LinearMoments::new(&data);
        let (l1, g1) = loss_and_gradients(&net, &data, None).unwrap();
        let (l2, g2) = loss_and_gradients(&net, &data, Some(&moments)).unwrap();
        assert!((l1 - l2).abs() < 1e-12 * (1.0 + l1));
        assert!((l1 - mse_loss(&net, &data).unwrap()).abs() < 1e-12 * (1.0 + l1));
        for (a, b) in g1.blocks().iter().zip(g2.blocks()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn interpolating_net_has_zero_gradient() {
        let mut rng = seeded(15);
        let stack = random_stack(&[3, 4, 2], true, &mut rng);
        let net = Network::linear(stack);
        let xs = random(10, 3, &mut rng);
        let ys = Matrix::from_fn(10, 2, |r, c| net.forward(xs.row(r)).unwrap()[c]);
        let data = Dataset::new(xs, ys).unwrap();
        let g = parameter_gradients(&net, &data).unwrap();
        assert!(g.norm() < 1e-13);
    }
}
