use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

use super::eig::sym_eig;
use super::matrix::{dot, norm2, Matrix};

/// Reduced singular value decomposition `A = U Σ Vᵀ`.
///
/// For an `m×n` input with `k = min(m, n)`, `u` is `m×k`, `v` is `n×k`, and
/// `singular_values` holds the `k` values in descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (c, s) in self.singular_values.iter().enumerate() {
                us[(r, c)] *= s;
            }
        }
        us.matmul_t(&self.v).expect("svd factors conform")
    }

    fn transposed(self) -> Svd {
        Svd { u: self.v, singular_values: self.singular_values, v: self.u }
    }
}

/// Reduced SVD computed from the eigendecomposition of the smaller Gram matrix.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(Error::NonFinite);
    }
    if a.rows() < a.cols() {
        return svd(&a.transpose()).map(Svd::transposed);
    }
    let (m, n) = a.shape();
    let eig = sym_eig(&a.gram())?;
    let v_full = eig.eigenvectors;

    // σ_i = ‖A v_i‖ is accurate even where the Gram eigenvalue is round-off.
    let mut columns: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..n)
        .map(|i| {
            let vi = v_full.column(i);
            let avi = a.matvec(&vi).expect("shapes conform");
            (norm2(&avi), avi, vi)
        })
        .collect();
    columns.sort_by(|x, y| y.0.total_cmp(&x.0));

    let smax = columns.first().map_or(0.0, |c| c.0);
    let mut u = Matrix::zeros(m, n);
    let mut v = Matrix::zeros(n, n);
    let mut singular_values = Vec::with_capacity(n);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut next_unit = 0;
    for (i, (sigma, avi, vi)) in columns.into_iter().enumerate() {
        let mut ui = if sigma > 1e-12 * smax && sigma > 0.0 {
            avi.iter().map(|x| x / sigma).collect()
        } else {
            vec![0.0; m]
        };
        if !orthonormalize_against(&mut ui, &basis) {
            // Rank-deficient direction: complete the basis with unit vectors.
            loop {
                if next_unit >= m {
                    return Err(Error::NoConvergence("singular vector completion"));
                }
                let mut e = vec![0.0; m];
                e[next_unit] = 1.0;
                next_unit += 1;
                if orthonormalize_against(&mut e, &basis) {
                    ui = e;
                    break;
                }
            }
        }
        u.set_column(i, &ui);
        v.set_column(i, &vi);
        singular_values.push(sigma);
        basis.push(ui);
    }
    Ok(Svd { u, singular_values, v })
}

/// Two passes of modified Gram–Schmidt; returns false if `x` collapses.
fn orthonormalize_against(x: &mut [f64], basis: &[Vec<f64>]) -> bool {
    let start = norm2(x);
    if start == 0.0 {
        return false;
    }
    for _ in 0..2 {
        for b in basis {
            let p = dot(x, b);
            x.iter_mut().zip(b).for_each(|(xi, bi)| *xi -= p * bi);
        }
    }
    let norm = norm2(x);
    if norm <= 1e-8 * start {
        return false;
    }
    x.iter_mut().for_each(|xi| *xi /= norm);
    true
}

/// Thin Householder QR of a tall matrix; returns `(Q, diag(R))`.
pub(crate) fn householder_qr(a: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::ShapeError(format!("QR needs rows >= cols, got {m}x{n}")));
    }
    let mut r = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut r_diag = Vec::with_capacity(n);
    for j in 0..n {
        let x: Vec<f64> = (j..m).map(|i| r[(i, j)]).collect();
        let alpha = norm2(&x);
        let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
        let mut vj = x;
        vj[0] += sign * alpha;
        let vnorm = norm2(&vj);
        if vnorm > 0.0 {
            vj.iter_mut().for_each(|t| *t /= vnorm);
            for c in j..n {
                let proj: f64 = (j..m).map(|i| vj[i - j] * r[(i, c)]).sum();
                for i in j..m {
                    r[(i, c)] -= 2.0 * vj[i - j] * proj;
                }
            }
        }
        r_diag.push(r[(j, j)]);
        reflectors.push(vj);
    }
    let mut q = Matrix::zeros(m, n);
    for i in 0..n {
        q[(i, i)] = 1.0;
    }
    for j in (0..n).rev() {
        let vj = &reflectors[j];
        for c in 0..n {
            let proj: f64 = (j..m).map(|i| vj[i - j] * q[(i, c)]).sum();
            if proj != 0.0 {
                for i in j..m {
                    q[(i, c)] -= 2.0 * vj[i - j] * proj;
                }
            }
        }
    }
    Ok((q, r_diag))
}

/// Leading `cols` columns of a Haar-distributed `rows×rows` orthogonal matrix.
///
/// QR of a standard Gaussian matrix, with each column of `Q` multiplied by
/// the sign of the matching diagonal entry of `R`.
pub fn haar_columns(rows: usize, cols: usize, rng: &mut SeededRng) -> Result<Matrix> {
    if rows < cols {
        return Err(Error::ShapeError(format!(
            "Haar columns need rows >= cols, got {rows}x{cols}"
        )));
    }
    let g = Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    let (mut q, r_diag) = householder_qr(&g)?;
    for (c, d) in r_diag.iter().enumerate() {
        if *d < 0.0 {
            for r in 0..rows {
                q[(r, c)] = -q[(r, c)];
            }
        }
    }
    Ok(q)
}
