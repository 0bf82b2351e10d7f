//! Dense real linear algebra: products and norms, Jacobi eigendecomposition,
//! fractional matrix powers, SVD and Haar-orthogonal sampling.

mod eig;
mod matrix;
mod svd;

pub use eig::{matrix_int_power, matrix_power, sym_eig, SymEig, CLAMP_TOL};
pub use matrix::{cosine_similarity, dot, frobenius_norm, norm2, Matrix};
pub use svd::{haar_columns, svd, Svd};
