//! Exact Wasserstein-2 distances: isotropic Gaussians in closed form, sorted
//! samples in one dimension, and optimal assignment for small point clouds.

use crate::error::{Error, Result};

/// Largest instance accepted by [`w2_empirical_assignment`].
pub const ASSIGNMENT_MAX: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum W2Method {
    BuresExact,
    Quantile1D,
    AssignmentExact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W2Report {
    pub value: f64,
    pub method: W2Method,
    /// sample count, 0 for exact laws
    pub n: usize,
}

/// `W2(N(m1, s1²Id), N(m2, s2²Id)) = sqrt(‖m1 - m2‖² + d (s1 - s2)²)`, with
/// `s1, s2` standard deviations.
///
/// ```
/// let w = flowreg::metrics::w2_gaussian_isotropic(&[0.0], 1.0, &[0.0], 2.0, 1);
/// assert_eq!(w, 1.0);
/// ```
pub fn w2_gaussian_isotropic(m1: &[f64], s1: f64, m2: &[f64], s2: f64, d: usize) -> f64 {
    let shift: f64 = m1.iter().zip(m2).map(|(a, b)| (a - b).powi(2)).sum();
    (shift + d as f64 * (s1 - s2).powi(2)).sqrt()
}

pub fn w2_gaussian_report(m1: &[f64], s1: f64, m2: &[f64], s2: f64, d: usize) -> W2Report {
    W2Report { value: w2_gaussian_isotropic(m1, s1, m2, s2, d), method: W2Method::BuresExact, n: 0 }
}

/// Order-statistics coupling of two equally sized 1-D samples.
pub fn w2_empirical_1d(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    if xs.is_empty() {
        return Err(Error::InvalidParameters("empty samples".into()));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let cost: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((cost / xs.len() as f64).sqrt())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Exact discrete optimal transport between two uniform point clouds of the
/// same size, by the Hungarian algorithm on squared distances.
pub fn w2_empirical_assignment(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    let n = xs.len();
    if n == 0 {
        return Err(Error::InvalidParameters("empty samples".into()));
    }
    if n > ASSIGNMENT_MAX {
        return Err(Error::TooLarge { n, max: ASSIGNMENT_MAX });
    }
    let cost: Vec<f64> = xs.iter().flat_map(|x| ys.iter().map(move |y| sq_dist(x, y))).collect();
    let assignment = hungarian(&cost, n);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Minimum-cost perfect matching for a dense `n × n` cost matrix in
/// row-major order; returns the column assigned to each row.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // shortest augmenting paths with potentials; 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|b| *b = false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        if row_of[j] > 0 {
            out[row_of[j] - 1] = j - 1;
        }
    }
    out
}

/// Sample mean and per-coordinate variance, the moment diagnostics reported
/// next to every empirical distance.
pub fn moments(xs: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let n = xs.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    let d = xs[0].len();
    let mut mean = vec![0.0; d];
    for x in xs {
        for j in 0..d {
            mean[j] += x[j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let ss: f64 = xs.iter().map(|x| sq_dist(x, &mean)).sum();
    let var = if n > 1 { ss / ((n - 1) * d) as f64 } else { 0.0 };
    (mean, var)
}
