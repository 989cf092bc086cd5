//! Small dense linear-algebra helpers shared by the drift and transport code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Dimension above which eigenvalues are obtained by power iteration instead
/// of a full symmetric eigendecomposition.
pub const DIRECT_EIGEN_MAX_DIM: usize = 64;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 10_000;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Largest eigenvalue of the symmetric part `(m + mᵀ)/2`.
pub fn lambda_max_sym(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    top_eigenvalue(&sym)
}

/// Operator (spectral) norm, i.e. the largest singular value.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    top_eigenvalue(&gram).max(0.0).sqrt()
}

/// Largest algebraic eigenvalue of a symmetric matrix.
pub fn top_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    let n = sym.nrows();
    if n == 0 {
        return 0.0;
    }
    if n == 1 {
        return sym[(0, 0)];
    }
    if is_diagonal(sym) {
        return sym.diagonal().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    if n <= DIRECT_EIGEN_MAX_DIM {
        let eig = SymmetricEigen::new(sym.clone());
        return eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    power_iteration_top(sym)
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| i == j || m[(i, j)] == 0.0))
}

/// Power iteration on `sym + shift·Id`, with the shift taken from the
/// Gershgorin bound so that the shifted matrix is positive semidefinite and
/// its dominant eigenvalue is the largest algebraic one of `sym`.
pub fn power_iteration_top(sym: &DMatrix<f64>) -> f64 {
    let n = sym.nrows();
    let shift = (0..n)
        .map(|i| sym.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut shifted = sym.clone();
    for i in 0..n {
        shifted[(i, i)] += shift;
    }
    // deterministic, non-degenerate start vector
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt() * 1e-3);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = &shifted * &v;
        let wn = w.norm();
        if wn == 0.0 {
            return -shift;
        }
        let next = v.dot(&w);
        v = w / wn;
        if (next - lambda).abs() <= POWER_TOL * next.abs().max(1.0) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda - shift
}
