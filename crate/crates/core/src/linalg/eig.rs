use crate::error::{Error, Result};

use super::matrix::{frobenius_norm, Matrix};

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-9;
/// Eigenvalues above `-CLAMP_TOL * λ_max` are treated as round-off and clamped to zero.
pub const CLAMP_TOL: f64 = 1e-10;

/// Eigendecomposition `A = Q Λ Qᵀ` of a symmetric matrix.
///
/// Eigenvalues are sorted in descending order; column `i` of `eigenvectors`
/// belongs to `eigenvalues[i]` and has its first significant entry positive.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl SymEig {
    /// `Q · diag(f(λ)) · Qᵀ`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let q = &self.eigenvectors;
        let n = q.rows();
        let mapped: Vec<f64> = self.eigenvalues.iter().map(|&l| f(l)).collect();
        let mut out = Matrix::zeros(n, n);
        for r in 0..n {
            for c in r..n {
                let v: f64 = (0..n).map(|k| q[(r, k)] * mapped[k] * q[(c, k)]).sum();
                out[(r, c)] = v;
                out[(c, r)] = v;
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.map_spectrum(|l| l)
    }
}

fn check_symmetric(a: &Matrix) -> Result<()> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "symmetric routine needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let asymmetry = a.asymmetry();
    if !(asymmetry <= SYMMETRY_TOL * (1.0 + frobenius_norm(a))) {
        return Err(Error::NotSymmetric { asymmetry });
    }
    Ok(())
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut acc = 0.0;
    for r in 0..n {
        for c in 0..n {
            if r != c {
                acc += a[(r, c)] * a[(r, c)];
            }
        }
    }
    acc.sqrt()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    check_symmetric(a)?;
    if !a.is_finite() {
        return Err(Error::NonFinite);
    }
    let n = a.rows();
    let mut work = a.symmetrized();
    let mut v = Matrix::identity(n);
    let norm = frobenius_norm(&work);
    let target = OFF_DIAGONAL_TOL * norm;

    let mut converged_sweeps = 0;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&work) <= target {
            // One polishing sweep after reaching tolerance; convergence is quadratic.
            converged_sweeps += 1;
            if converged_sweeps > 1 {
                break;
            }
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = work[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (work[(q, q)] - work[(p, p)]) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (work[(k, p)], work[(k, q)]);
                    work[(k, p)] = c * akp - s * akq;
                    work[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (work[(p, k)], work[(q, k)]);
                    work[(p, k)] = c * apk - s * aqk;
                    work[(q, k)] = s * apk + c * aqk;
                }
                work[(p, q)] = 0.0;
                work[(q, p)] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if off_diagonal_norm(&work) > target {
        return Err(Error::NoConvergence("Jacobi eigendecomposition"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| work[(j, j)].total_cmp(&work[(i, i)]));
    let eigenvalues = order.iter().map(|&i| work[(i, i)]).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = v.column(src);
        orient(&mut col);
        eigenvectors.set_column(dst, &col);
    }
    Ok(SymEig { eigenvalues, eigenvectors })
}

/// Flips `v` so its first significant entry is positive.
pub(crate) fn orient(v: &mut [f64]) {
    let max = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-8 * max) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Fractional power of a symmetric positive semi-definite matrix.
///
/// Eigenvalues in `[-1e-10·λ_max, 0)` are clamped to zero; anything more
/// negative is rejected with [`Error::IndefiniteInput`].
pub fn matrix_power(a: &Matrix, alpha: f64) -> Result<Matrix> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("power must be positive, got {alpha}")));
    }
    let eig = sym_eig(a)?;
    check_psd_spectrum(&eig.eigenvalues)?;
    Ok(eig.map_spectrum(|l| if l > 0.0 { l.powf(alpha) } else { 0.0 }))
}

pub(crate) fn check_psd_spectrum(eigenvalues: &[f64]) -> Result<()> {
    let lmax = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let threshold = -CLAMP_TOL * lmax;
    match eigenvalues.last() {
        Some(&lmin) if lmin < threshold => {
            Err(Error::IndefiniteInput { eigenvalue: lmin, threshold })
        }
        _ => Ok(()),
    }
}

/// `A^k` by repeated squaring, for square `A` and integer `k ≥ 0`.
pub fn matrix_int_power(a: &Matrix, k: u32) -> Result<Matrix> {
    if !a.is_square() {
        return Err(Error::ShapeMismatch("integer power of a non-square matrix".into()));
    }
    let mut result = Matrix::identity(a.rows());
    let mut base = a.clone();
    let mut k = k;
    while k > 0 {
        if k & 1 == 1 {
            result = result.matmul(&base)?;
        }
        k >>= 1;
        if k > 0 {
            base = base.matmul(&base)?;
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = seeded(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        let err = a.sub(b).unwrap().frobenius_norm();
        assert!(err <= tol, "difference {err:e} exceeds {tol:e}\n{a:?}\n{b:?}");
    }

    fn check_invariants(a: &Matrix, eig: &SymEig) {
        let n = a.rows();
        let q = &eig.eigenvectors;
        assert_close(&q.gram(), &Matrix::identity(n), 1e-10 * (n as f64).sqrt());
        assert_close(&eig.reconstruct(), a, 1e-8 * (1.0 + a.frobenius_norm()));
        assert!(eig.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn diagonal_input() {
        let a = Matrix::from_diag(&[1.0, 3.0]);
        let eig = sym_eig(&a).unwrap();
        assert_eq!(eig.eigenvalues, vec![3.0, 1.0]);
        let p = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_close(&eig.eigenvectors, &p, 0.0);
        let eig = sym_eig(&Matrix::from_diag(&[3.0, 1.0])).unwrap();
        assert_close(&eig.eigenvectors, &Matrix::identity(2), 0.0);
    }

    #[test]
    fn two_by_two_hand_decomposition() {
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let eig = sym_eig(&a).unwrap();
        assert!((eig.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((eig.eigenvalues[1] - 1.0).abs() < 1e-14);
        let h = 0.5f64.sqrt();
        let q = Matrix::from_rows(&[vec![h, h], vec![h, -h]]).unwrap();
        assert_close(&eig.eigenvectors, &q, 1e-14);
    }

    #[test]
    fn random_gram_reconstructs() {
        let b = random_matrix(6, 6, 11);
        let a = b.matmul_t(&b).unwrap();
        let eig = sym_eig(&a).unwrap();
        check_invariants(&a, &eig);
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12));
    }

    #[test]
    fn rejects_asymmetric_and_rectangular() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(Error::NotSymmetric { .. })));
        assert!(matches!(sym_eig(&Matrix::zeros(2, 3)), Err(Error::ShapeMismatch(_))));
        assert!(matches!(matrix_power(&a, 0.5), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn zero_and_empty_matrices() {
        let eig = sym_eig(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(eig.eigenvalues, vec![0.0; 3]);
        assert_eq!(matrix_power(&Matrix::zeros(3, 3), 0.3).unwrap(), Matrix::zeros(3, 3));
        assert!(sym_eig(&Matrix::zeros(0, 0)).unwrap().eigenvalues.is_empty());
    }

    #[test]
    fn power_examples() {
        assert_close(&matrix_power(&Matrix::identity(4), 0.2).unwrap(), &Matrix::identity(4), 1e-14);
        assert_close(
            &matrix_power(&Matrix::from_diag(&[4.0, 9.0]), 0.5).unwrap(),
            &Matrix::from_diag(&[2.0, 3.0]),
            1e-14,
        );
        let a = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let s3 = 3f64.sqrt();
        let expected = Matrix::from_rows(&[
            vec![(s3 + 1.0) / 2.0, (s3 - 1.0) / 2.0],
            vec![(s3 - 1.0) / 2.0, (s3 + 1.0) / 2.0],
        ])
        .unwrap();
        assert_close(&matrix_power(&a, 0.5).unwrap(), &expected, 1e-14);
    }

    #[test]
    fn power_rejects_indefinite_but_clamps_noise() {
        let a = Matrix::from_diag(&[1.0, -1e-3]);
        assert!(matches!(matrix_power(&a, 0.5), Err(Error::IndefiniteInput { .. })));
        let a = Matrix::from_diag(&[1.0, -1e-12]);
        let p = matrix_power(&a, 0.5).unwrap();
        assert_eq!(p[(1, 1)], 0.0);
        assert!(matches!(matrix_power(&Matrix::identity(2), 0.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn integer_powers() {
        let a = random_matrix(4, 4, 5);
        let cube = a.matmul(&a).unwrap().matmul(&a).unwrap();
        assert_close(&matrix_int_power(&a, 3).unwrap(), &cube, 1e-12);
        assert_eq!(matrix_int_power(&a, 0).unwrap(), Matrix::identity(4));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn roots_compose_back(n in 1usize..=20, layers in 2u32..=5, seed in any::<u64>()) {
            let b = random_matrix(n, n, seed);
            let a = b.matmul_t(&b).unwrap();
            let root = matrix_power(&a, 1.0 / layers as f64).unwrap();
            let back = matrix_int_power(&root, layers).unwrap();
            let err = back.sub(&a).unwrap().frobenius_norm();
            prop_assert!(err <= 1e-7 * a.frobenius_norm(), "err {err:e}");
        }

        #[test]
        fn unit_power_is_identity_map(n in 1usize..=12, seed in any::<u64>()) {
            let b = random_matrix(n, n + 2, seed);
            let a = b.matmul_t(&b).unwrap();
            let p = matrix_power(&a, 1.0).unwrap();
            prop_assert!(p.sub(&a).unwrap().frobenius_norm() <= 1e-8 * (1.0 + a.frobenius_norm()));
        }

        #[test]
        fn integer_alpha_matches_products(n in 1usize..=10, seed in any::<u64>()) {
            let b = random_matrix(n, n, seed);
            let a = b.matmul_t(&b).unwrap();
            let p = matrix_power(&a, 2.0).unwrap();
            let direct = a.matmul(&a).unwrap();
            prop_assert!(p.sub(&direct).unwrap().frobenius_norm() <= 1e-8 * direct.frobenius_norm());
        }
    }
}
