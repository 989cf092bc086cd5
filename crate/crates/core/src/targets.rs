//! Target distributions with exact posteriors under `X_t = f_t Y + ḡ_t ξ`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::quadrature::{integrate_vec_split, Tolerance};
use crate::schedules::ScheduleValues;
use crate::sphere;

/// Relative tolerance of posterior quadrature.
pub const POSTERIOR_QUAD_TOL: f64 = 1e-10;
/// Points in the tabulated CDF used for inverse-CDF sampling.
pub const CDF_TABLE_POINTS: usize = 4096;
/// Points in the Hölder audit grid.
pub const HOLDER_AUDIT_POINTS: usize = 10_000;

// log-weights this far below the peak are dropped (e^-80 ≈ 1.8e-35)
const LOG_WEIGHT_CUTOFF: f64 = 80.0;
const SCAN_POINTS: usize = 2001;
const SCAN_WIDTH: f64 = 40.0;

/// Hölder perturbation `a(y)` of a one-dimensional potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    Zero,
    /// `a(y) = k·|y|^{1/2}`
    AbsSqrt { k: f64 },
    /// `a(y) = k·cos(ω y)`
    Cos { k: f64, omega: f64 },
}

impl Perturbation {
    pub fn eval(&self, y: f64) -> f64 {
        match *self {
            Perturbation::Zero => 0.0,
            Perturbation::AbsSqrt { k } => k * y.abs().sqrt(),
            Perturbation::Cos { k, omega } => k * (omega * y).cos(),
        }
    }

    /// Declared Hölder constant and exponent `(K, β)`.
    pub fn holder(&self) -> (f64, f64) {
        match *self {
            Perturbation::Zero => (0.0, 1.0),
            Perturbation::AbsSqrt { k } => (k.abs(), 0.5),
            Perturbation::Cos { k, omega } => (k.abs() * omega.abs(), 1.0),
        }
    }

    /// Points where `a` fails to be smooth.
    fn kinks(&self) -> &'static [f64] {
        match self {
            Perturbation::AbsSqrt { .. } => &[0.0],
            _ => &[],
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Perturbation::Zero => "zero".into(),
            Perturbation::AbsSqrt { k } => format!("abs_sqrt({k})"),
            Perturbation::Cos { k, omega } => format!("cos({k},{omega})"),
        }
    }
}

/// One-dimensional density `∝ exp(-α(y-c)²/2 + a(y))` on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature1D {
    pub alpha: f64,
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
    pub perturbation: Perturbation,
}

impl Quadrature1D {
    pub fn new(alpha: f64, center: f64, support: (f64, f64), perturbation: Perturbation) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameters(format!("curvature α must be positive, got {alpha}")));
        }
        let (lo, hi) = support;
        if !(lo < hi) {
            return Err(Error::InvalidParameters(format!("empty support [{lo}, {hi}]")));
        }
        let (k, beta) = perturbation.holder();
        if !(k >= 0.0) || !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidParameters(format!("Hölder pair (K={k}, β={beta}) out of range")));
        }
        Ok(Self { alpha, center, lo, hi, perturbation })
    }

    /// Log prior density up to a constant; `-∞` outside the support.
    pub fn log_density(&self, y: f64) -> f64 {
        if y < self.lo || y > self.hi {
            return f64::NEG_INFINITY;
        }
        let z = y - self.center;
        -0.5 * self.alpha * z * z + self.perturbation.eval(y)
    }

    /// Integration window for `log_density(y) + extra(y)` where `extra` is
    /// a Gaussian factor of the given precision centred at `c`: a scan
    /// over the support finds where the log weight is within the cutoff of
    /// its maximum.
    fn window(&self, precision: f64, peak_guess: f64, logw: &dyn Fn(f64) -> f64) -> (f64, f64, f64) {
        let half = SCAN_WIDTH / precision.sqrt();
        let a = (peak_guess - half).max(self.lo);
        let b = (peak_guess + half).min(self.hi);
        let (a, b) = if a < b { (a, b) } else { (self.lo.max(peak_guess - half), self.hi.min(peak_guess + half)) };
        let step = (b - a) / (SCAN_POINTS - 1) as f64;
        let vals: Vec<f64> = (0..SCAN_POINTS).map(|i| logw(a + i as f64 * step)).collect();
        let (imax, vmax) = vals
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let first = vals.iter().position(|v| *v > vmax - LOG_WEIGHT_CUTOFF).unwrap_or(0);
        let last = vals.iter().rposition(|v| *v > vmax - LOG_WEIGHT_CUTOFF).unwrap_or(SCAN_POINTS - 1);
        let lo = (a + (first as f64 - 1.0) * step).max(a);
        let hi = (a + (last as f64 + 1.0) * step).min(b);
        (lo, hi, a + imax as f64 * step)
    }

    /// Normalised moments `E[Z^k]`, `k = 1, 2, 3`, of `Z = (Y - shift)/scale`
    /// under the density `∝ exp(logw)`.
    fn moments(&self, precision: f64, peak_guess: f64, logw: &dyn Fn(f64) -> f64) -> Result<Moments> {
        let (lo, hi, mode) = self.window(precision, peak_guess, logw);
        let scale = 1.0 / precision.sqrt();
        let shift = mode;
        let peak = logw(mode);
        let integrand = |y: f64, out: &mut [f64]| {
            let w = (logw(y) - peak).exp();
            let z = (y - shift) / scale;
            out[0] = w;
            out[1] = z * w;
            out[2] = z * z * w;
            out[3] = z * z * z * w;
        };
        let mut breaks: Vec<f64> = self.perturbation.kinks().to_vec();
        breaks.push(mode);
        let m = integrate_vec_split(integrand, lo, hi, &breaks, 4, Tolerance::relative(POSTERIOR_QUAD_TOL))?;
        if !(m[0] > 0.0) {
            return Err(Error::NonFinite { what: "posterior normalising constant", step: None });
        }
        Ok(Moments { shift, scale, m1: m[1] / m[0], m2: m[2] / m[0], m3: m[3] / m[0] })
    }

    /// Interval carrying all but a negligible part of the prior mass, and
    /// the prior mode on it.
    pub fn prior_window(&self) -> (f64, f64, f64) {
        let peak = self.center.clamp(self.lo, self.hi);
        self.window(self.alpha, peak, &|y| self.log_density(y))
    }

    /// Points where the density is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.perturbation.kinks().to_vec()
    }

    fn prior_moments(&self) -> Result<Moments> {
        let peak = self.center.clamp(self.lo, self.hi);
        self.moments(self.alpha, peak, &|y| self.log_density(y))
    }

    /// Largest observed Hölder quotient on a uniform audit grid over the
    /// bulk of the prior, against the declared constant.
    pub fn holder_audit(&self) -> HolderAudit {
        let (k, beta) = self.perturbation.holder();
        let half = 12.0 / self.alpha.sqrt();
        let a = (self.center - half).max(self.lo);
        let b = (self.center + half).min(self.hi);
        let n = HOLDER_AUDIT_POINTS;
        let ys: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
        let vals: Vec<f64> = ys.iter().map(|&y| self.perturbation.eval(y)).collect();
        let anchors: Vec<usize> = (0..n).step_by(n / 100).collect();
        let mut worst: f64 = 0.0;
        let mut quotient = |i: usize, j: usize| {
            let dy = (ys[i] - ys[j]).abs();
            if dy > 0.0 {
                worst = worst.max((vals[i] - vals[j]).abs() / dy.powf(beta));
            }
        };
        for i in 1..n {
            quotient(i, i - 1);
        }
        for &j in &anchors {
            for i in 0..n {
                quotient(i, j);
            }
        }
        HolderAudit { declared: k, beta, observed: worst, passed: worst <= k * (1.0 + 1e-9) + 1e-12 }
    }
}

/// Outcome of [`Quadrature1D::holder_audit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderAudit {
    pub declared: f64,
    pub beta: f64,
    pub observed: f64,
    pub passed: bool,
}

struct Moments {
    shift: f64,
    scale: f64,
    m1: f64,
    m2: f64,
    m3: f64,
}

impl Moments {
    fn mean(&self) -> f64 {
        self.shift + self.scale * self.m1
    }

    fn var(&self) -> f64 {
        (self.m2 - self.m1 * self.m1).max(0.0) * self.scale * self.scale
    }

    /// `Cov(Y, Y²)`
    fn cov_y_sq(&self) -> f64 {
        let mean = self.mean();
        let s3 = self.scale.powi(3);
        // Y = μ + s(Z - m1): Cov(Y, Y²) = 2μ Var + E[(Y-μ)³]
        let central3 = (self.m3 - 3.0 * self.m1 * self.m2 + 2.0 * self.m1.powi(3)) * s3;
        2.0 * mean * self.var() + central3
    }

    fn second_moment(&self) -> f64 {
        let mean = self.mean();
        mean * mean + self.var()
    }
}

/// Analytic target distributions.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetModel {
    /// `N(mean, var·Id)`
    IsotropicGaussian { mean: Vec<f64>, var: f64 },
    /// `Σ wᵢ N(mᵢ, comp_var·Id)`; `comp_var = 0` gives point masses
    GaussianMixture { weights: Vec<f64>, means: Vec<Vec<f64>>, comp_var: f64 },
    Quadrature1D(Quadrature1D),
    /// uniform measure on the unit sphere of `R^dim`
    SphereUniform { dim: usize },
}

impl fmt::Display for TargetModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetModel::IsotropicGaussian { mean, var } => {
                write!(f, "gaussian(d={}, s={})", mean.len(), var.sqrt())
            }
            TargetModel::GaussianMixture { weights, comp_var, means } => write!(
                f,
                "mixture(d={}, components={}, comp_var={comp_var})",
                means.first().map_or(0, Vec::len),
                weights.len()
            ),
            TargetModel::Quadrature1D(q) => {
                write!(f, "quadrature(alpha={}, a={})", q.alpha, q.perturbation.name())
            }
            TargetModel::SphereUniform { dim } => write!(f, "sphere(d={dim})"),
        }
    }
}

/// Posterior quantities at one `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    /// `μ_t(x) = E[Y | X_t = x]`
    pub mu: DVector<f64>,
    /// `s_t(x) = ∇ log p_t(x)`
    pub score: DVector<f64>,
    /// `∇s_t(x)`
    pub score_jac: DMatrix<f64>,
    /// `∇μ_t(x)`
    pub mu_jac: DMatrix<f64>,
    /// `Σ_t(x) = Cov(Y | X_t = x)`; `None` where the target does not expose it
    pub cov: Option<DMatrix<f64>>,
    /// `Cov(Y, ‖Y‖² | X_t = x)`
    pub cov_y_sq: Option<DVector<f64>>,
}

impl PosteriorSummary {
    /// Scalar posterior variance (trace of `Σ` over `d`).
    pub fn sigma_post(&self) -> Option<f64> {
        self.cov.as_ref().map(|c| c.trace() / c.nrows() as f64)
    }
}

impl TargetModel {
    pub fn gaussian(mean: Vec<f64>, var: f64) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::InvalidDimension(0));
        }
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::InvalidParameters(format!("variance must be positive, got {var}")));
        }
        Ok(TargetModel::IsotropicGaussian { mean, var })
    }

    /// Centred isotropic Gaussian with standard deviation `s`.
    pub fn centered_gaussian(d: usize, s: f64) -> Result<Self> {
        Self::gaussian(vec![0.0; d], s * s)
    }

    pub fn mixture(weights: Vec<f64>, means: Vec<Vec<f64>>, comp_var: f64) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() {
            return Err(Error::LengthMismatch { left: weights.len(), right: means.len() });
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return Err(Error::InvalidParameters("component means must share a positive dimension".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameters("weights must be nonnegative and sum to 1".into()));
        }
        if !(comp_var >= 0.0 && comp_var.is_finite()) {
            return Err(Error::InvalidParameters(format!("component variance must be nonnegative, got {comp_var}")));
        }
        Ok(TargetModel::GaussianMixture { weights, means, comp_var })
    }

    /// One-dimensional mixture from scalar means.
    pub fn mixture_1d(weights: Vec<f64>, means: Vec<f64>, comp_var: f64) -> Result<Self> {
        Self::mixture(weights, means.into_iter().map(|m| vec![m]).collect(), comp_var)
    }

    pub fn sphere(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        Ok(TargetModel::SphereUniform { dim })
    }

    /// Reference target `u = y²/2`, `a = k|y|^{1/2}` on the whole line.
    pub fn holder_half(k: f64) -> Result<Self> {
        Ok(TargetModel::Quadrature1D(Quadrature1D::new(
            1.0,
            0.0,
            (f64::NEG_INFINITY, f64::INFINITY),
            Perturbation::AbsSqrt { k },
        )?))
    }

    pub fn dim(&self) -> usize {
        match self {
            TargetModel::IsotropicGaussian { mean, .. } => mean.len(),
            TargetModel::GaussianMixture { means, .. } => means[0].len(),
            TargetModel::Quadrature1D(_) => 1,
            TargetModel::SphereUniform { dim } => *dim,
        }
    }

    /// Whether the target fits the weakly log-concave class (strongly convex
    /// potential plus Hölder perturbation).
    pub fn is_weakly_log_concave(&self) -> bool {
        match self {
            TargetModel::IsotropicGaussian { .. } | TargetModel::Quadrature1D(_) => true,
            TargetModel::GaussianMixture { comp_var, .. } => *comp_var > 0.0,
            TargetModel::SphereUniform { .. } => false,
        }
    }

    /// Whether the drift `x ↦ v_t(x)` is linear for every schedule.
    pub fn has_linear_drift(&self) -> bool {
        matches!(self, TargetModel::IsotropicGaussian { .. })
    }

    /// `E‖Y‖²`.
    pub fn second_moment(&self) -> Result<f64> {
        match self {
            TargetModel::IsotropicGaussian { mean, var } => Ok(crate::linalg::norm_sq(mean) + mean.len() as f64 * var),
            TargetModel::GaussianMixture { weights, means, comp_var } => Ok(weights
                .iter()
                .zip(means)
                .map(|(w, m)| w * (crate::linalg::norm_sq(m) + m.len() as f64 * comp_var))
                .sum()),
            TargetModel::Quadrature1D(q) => Ok(q.prior_moments()?.second_moment()),
            TargetModel::SphereUniform { .. } => Ok(1.0),
        }
    }

    /// `E‖Y‖²/d`, the per-coordinate second moment.
    pub fn second_moment_ratio(&self) -> Result<f64> {
        Ok(self.second_moment()? / self.dim() as f64)
    }

    /// Mean of the target.
    pub fn mean(&self) -> Result<Vec<f64>> {
        match self {
            TargetModel::IsotropicGaussian { mean, .. } => Ok(mean.clone()),
            TargetModel::GaussianMixture { weights, means, .. } => {
                let d = means[0].len();
                let mut out = vec![0.0; d];
                for (w, m) in weights.iter().zip(means) {
                    for j in 0..d {
                        out[j] += w * m[j];
                    }
                }
                Ok(out)
            }
            TargetModel::Quadrature1D(q) => Ok(vec![q.prior_moments()?.mean()]),
            TargetModel::SphereUniform { dim } => Ok(vec![0.0; *dim]),
        }
    }

    /// Posterior of `Y` given `X_t = x`.
    pub fn posterior(&self, sv: &ScheduleValues, x: &[f64]) -> Result<PosteriorSummary> {
        if !(sv.gbar > 0.0) {
            return Err(Error::OutOfDomain { what: "effective noise scale is zero", t: sv.t });
        }
        if x.len() != self.dim() {
            return Err(Error::LengthMismatch { left: x.len(), right: self.dim() });
        }
        match self {
            TargetModel::IsotropicGaussian { mean, var } => {
                Ok(mixture_posterior(&[1.0], std::slice::from_ref(mean), *var, sv, x))
            }
            TargetModel::GaussianMixture { weights, means, comp_var } => {
                Ok(mixture_posterior(weights, means, *comp_var, sv, x))
            }
            TargetModel::Quadrature1D(q) => quadrature_posterior(q, sv, x[0]),
            TargetModel::SphereUniform { dim } => sphere_posterior(*dim, sv, x),
        }
    }

    /// `n` i.i.d. draws; deterministic in `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::InvalidParameters("sample count must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim();
        let normal = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| rng.sample(StandardNormal)).collect() };
        match self {
            TargetModel::IsotropicGaussian { mean, var } => {
                let s = var.sqrt();
                Ok((0..n)
                    .map(|_| normal(&mut rng).iter().zip(mean).map(|(z, m)| m + s * z).collect())
                    .collect())
            }
            TargetModel::GaussianMixture { weights, means, comp_var } => {
                let s = comp_var.sqrt();
                let cum: Vec<f64> = weights
                    .iter()
                    .scan(0.0, |acc, w| {
                        *acc += w;
                        Some(*acc)
                    })
                    .collect();
                Ok((0..n)
                    .map(|_| {
                        let u: f64 = rng.random::<f64>() * cum[cum.len() - 1];
                        let i = cum.iter().position(|c| u < *c).unwrap_or(cum.len() - 1);
                        let z = normal(&mut rng);
                        means[i].iter().zip(z).map(|(m, z)| m + s * z).collect()
                    })
                    .collect())
            }
            TargetModel::Quadrature1D(q) => {
                let table = CdfTable::new(q)?;
                Ok((0..n).map(|_| vec![table.invert(rng.random::<f64>())]).collect())
            }
            TargetModel::SphereUniform { .. } => Ok((0..n)
                .map(|_| loop {
                    let z = normal(&mut rng);
                    let r = crate::linalg::norm(&z);
                    if r > 1e-12 {
                        break z.iter().map(|v| v / r).collect();
                    }
                })
                .collect()),
        }
    }
}

/// Tabulated CDF of a one-dimensional quadrature target.
struct CdfTable {
    ys: Vec<f64>,
    cdf: Vec<f64>,
}

impl CdfTable {
    fn new(q: &Quadrature1D) -> Result<Self> {
        let peak = q.center.clamp(q.lo, q.hi);
        let (lo, hi, mode) = q.window(q.alpha, peak, &|y| q.log_density(y));
        let n = CDF_TABLE_POINTS;
        let ys: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let top = q.log_density(mode);
        let dens: Vec<f64> = ys.iter().map(|&y| (q.log_density(y) - top).exp()).collect();
        let mut cdf = vec![0.0; n];
        for i in 1..n {
            cdf[i] = cdf[i - 1] + 0.5 * (dens[i] + dens[i - 1]) * (ys[i] - ys[i - 1]);
        }
        let total = cdf[n - 1];
        if !(total > 0.0) {
            return Err(Error::NonFinite { what: "tabulated CDF", step: None });
        }
        cdf.iter_mut().for_each(|c| *c /= total);
        Ok(Self { ys, cdf })
    }

    fn invert(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|c| *c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.ys[i - 1] + w * (self.ys[i] - self.ys[i - 1])
    }
}

fn mixture_posterior(
    weights: &[f64],
    means: &[Vec<f64>],
    comp_var: f64,
    sv: &ScheduleValues,
    x: &[f64],
) -> PosteriorSummary {
    let d = x.len();
    let (f, g2) = (sv.f, sv.gbar * sv.gbar);
    // marginal variance of each component under the path, and posterior variance
    let v = f * f * comp_var + g2;
    let tau2 = comp_var * g2 / v;

    let logr: Vec<f64> = weights
        .iter()
        .zip(means)
        .map(|(w, m)| {
            let dist2: f64 = x.iter().zip(m).map(|(xi, mi)| (xi - f * mi).powi(2)).sum();
            if *w > 0.0 {
                w.ln() - dist2 / (2.0 * v)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let top = logr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut r: Vec<f64> = logr.iter().map(|l| (l - top).exp()).collect();
    let z: f64 = r.iter().sum();
    r.iter_mut().for_each(|ri| *ri /= z);

    let xv = DVector::from_column_slice(x);
    let mpost: Vec<DVector<f64>> = means
        .iter()
        .map(|m| (xv.clone() * (comp_var * f) + DVector::from_column_slice(m) * g2) / v)
        .collect();
    let comp_score: Vec<DVector<f64>> =
        means.iter().map(|m| -(xv.clone() - DVector::from_column_slice(m) * f) / v).collect();

    let mut mu = DVector::zeros(d);
    let mut score = DVector::zeros(d);
    for i in 0..r.len() {
        mu += &mpost[i] * r[i];
        score += &comp_score[i] * r[i];
    }

    let eye = DMatrix::<f64>::identity(d, d);
    let mut score_jac = -eye.clone() / v;
    let mut cov = eye.clone() * tau2;
    let mut third = DVector::zeros(d);
    let mut mu_jac = eye * (comp_var * f / v);
    for i in 0..r.len() {
        if r[i] == 0.0 {
            continue;
        }
        let ds = &comp_score[i] - &score;
        score_jac += &ds * ds.transpose() * r[i];
        let dm = &mpost[i] - &mu;
        cov += &dm * dm.transpose() * r[i];
        third += &dm * (r[i] * (dm.norm_squared() + (d as f64 + 2.0) * tau2));
        // ∇rᵢ = rᵢ (sᵢ - s̄)
        mu_jac += &mpost[i] * ds.transpose() * r[i];
    }
    // Cov(Y, ‖Y‖²) = E[(Y-μ)‖Y-μ‖²] + 2Σμ
    let cov_y_sq = third + &cov * &mu * 2.0;

    PosteriorSummary { mu, score, score_jac, mu_jac, cov: Some(cov), cov_y_sq: Some(cov_y_sq) }
}

fn quadrature_posterior(q: &Quadrature1D, sv: &ScheduleValues, x: f64) -> Result<PosteriorSummary> {
    let (f, g2) = (sv.f, sv.gbar * sv.gbar);
    let precision = q.alpha + f * f / g2;
    let guess = ((q.alpha * q.center + f * x / g2) / precision).clamp(q.lo, q.hi);
    let logw = |y: f64| {
        let r = x - f * y;
        q.log_density(y) - r * r / (2.0 * g2)
    };
    let m = q.moments(precision, guess, &logw)?;
    let mean = m.mean();
    let var = m.var();
    let score = (f * mean - x) / g2;
    let mu_jac = f * var / g2;
    let score_jac = (f * mu_jac - 1.0) / g2;
    Ok(PosteriorSummary {
        mu: DVector::from_element(1, mean),
        score: DVector::from_element(1, score),
        score_jac: DMatrix::from_element(1, 1, score_jac),
        mu_jac: DMatrix::from_element(1, 1, mu_jac),
        cov: Some(DMatrix::from_element(1, 1, var)),
        cov_y_sq: Some(DVector::from_element(1, m.cov_y_sq())),
    })
}

fn sphere_posterior(d: usize, sv: &ScheduleValues, x: &[f64]) -> Result<PosteriorSummary> {
    let (f, g2) = (sv.f, sv.gbar * sv.gbar);
    let xv = DVector::from_column_slice(x);
    let r = xv.norm();
    let eye = DMatrix::<f64>::identity(d, d);
    let (mu, mu_jac, cov) = if r == 0.0 || f == 0.0 {
        // posterior is uniform: mean 0, covariance Id/d
        let cov = eye.clone() / d as f64;
        (DVector::zeros(d), &cov * (f / g2), Some(cov))
    } else {
        let kappa = f * r / g2;
        let (a, ap) = sphere::ratio_and_derivative(d, kappa)?;
        let u = &xv / r;
        let uu = &u * u.transpose();
        let tangential = &eye - &uu;
        let mu_jac = &uu * (ap * f / g2) + &tangential * (a / r);
        // von Mises–Fisher covariance; not exposed off the symmetry axis
        (&u * a, mu_jac, None)
    };
    let score = (&mu * f - &xv) / g2;
    let score_jac = (&mu_jac * f - &eye) / g2;
    let cov_y_sq = cov.as_ref().map(|_| DVector::zeros(d));
    Ok(PosteriorSummary { mu, score, score_jac, mu_jac, cov, cov_y_sq })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedules::Schedule;
    use proptest::prelude::*;

    fn dirac_pair() -> TargetModel {
        TargetModel::mixture_1d(vec![0.5, 0.5], vec![-1.0, 1.0], 0.0).unwrap()
    }

    #[test]
    fn standard_gaussian_under_diffusion() {
        let target = TargetModel::centered_gaussian(3, 1.0).unwrap();
        let s = Schedule::rescaled_diffusion();
        for t in [0.0, 0.3, 0.9] {
            let sv = s.eval(t).unwrap();
            let x = [0.4, -1.2, 2.0];
            let p = target.posterior(&sv, &x).unwrap();
            for j in 0..3 {
                assert!((p.score[j] + x[j]).abs() < 1e-14);
                assert!((p.mu[j] - t * x[j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn symmetric_mixture_at_origin() {
        let sv = Schedule::lipman_linear().eval(0.6).unwrap();
        let p = dirac_pair().posterior(&sv, &[0.0]).unwrap();
        assert_eq!(p.mu[0], 0.0);
        assert_eq!(p.score[0], 0.0);
    }

    #[test]
    fn dirac_pair_posterior_is_tanh() {
        let s = Schedule::lipman_linear();
        for t in [0.1, 0.5, 0.9] {
            let sv = s.eval(t).unwrap();
            for x in [-2.0, -0.3, 0.7, 1.5] {
                let p = dirac_pair().posterior(&sv, &[x]).unwrap();
                let exact = (sv.f * x / (sv.gbar * sv.gbar)).tanh();
                assert!((p.mu[0] - exact).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_component_posterior_variance() {
        let s2 = 2.5;
        let target = TargetModel::gaussian(vec![0.3], s2).unwrap();
        let sv = Schedule::rescaled_diffusion().eval(0.7).unwrap();
        let p = target.posterior(&sv, &[1.1]).unwrap();
        let g2 = sv.gbar * sv.gbar;
        let exact = s2 * g2 / (sv.f * sv.f * s2 + g2);
        assert!((p.sigma_post().unwrap() - exact).abs() < 1e-15);
    }

    #[test]
    fn second_moments() {
        assert_eq!(TargetModel::centered_gaussian(5, 2.0).unwrap().second_moment().unwrap(), 20.0);
        assert_eq!(TargetModel::sphere(7).unwrap().second_moment().unwrap(), 1.0);
        let mix = TargetModel::mixture_1d(vec![0.5, 0.5], vec![-1.0, 1.0], 0.25).unwrap();
        assert!((mix.second_moment().unwrap() - 1.25).abs() < 1e-15);
        let q = TargetModel::Quadrature1D(Quadrature1D::new(4.0, 0.0, (f64::NEG_INFINITY, f64::INFINITY), Perturbation::Zero).unwrap());
        assert!((q.second_moment().unwrap() - 0.25).abs() < 1e-10);
    }

    #[test]
    fn quadrature_matches_gaussian_closed_form() {
        let alpha = 0.25;
        let q = TargetModel::Quadrature1D(
            Quadrature1D::new(alpha, 0.0, (f64::NEG_INFINITY, f64::INFINITY), Perturbation::Zero).unwrap(),
        );
        let g = TargetModel::centered_gaussian(1, 2.0).unwrap();
        for s in [Schedule::lipman_linear(), Schedule::rescaled_diffusion()] {
            for t in [0.0, 0.05, 0.5, 0.95, 0.999] {
                let sv = s.eval(t).unwrap();
                for x in [-3.0, 0.0, 0.8, 5.0] {
                    let a = q.posterior(&sv, &[x]).unwrap();
                    let b = g.posterior(&sv, &[x]).unwrap();
                    assert!((a.mu[0] - b.mu[0]).abs() < 1e-8, "t={t} x={x}");
                    assert!((a.score[0] - b.score[0]).abs() < 1e-8 * (1.0 + b.score[0].abs()));
                    let (ca, cb) = (a.cov.unwrap()[(0, 0)], b.cov.unwrap()[(0, 0)]);
                    assert!((ca - cb).abs() < 1e-8 * cb.max(1e-3));
                    let (ta, tb) = (a.cov_y_sq.unwrap()[0], b.cov_y_sq.unwrap()[0]);
                    assert!((ta - tb).abs() < 1e-7 * (1.0 + tb.abs()), "{ta} vs {tb}");
                }
            }
        }
    }

    #[test]
    fn truncated_support_is_respected() {
        let q = Quadrature1D::new(1.0, 0.0, (0.0, 1.0), Perturbation::Zero).unwrap();
        let t = TargetModel::Quadrature1D(q);
        let sv = Schedule::lipman_linear().eval(0.5).unwrap();
        let p = t.posterior(&sv, &[-10.0]).unwrap();
        assert!(p.mu[0] > 0.0 && p.mu[0] < 0.1);
        let draws = t.sample(1000, 3).unwrap();
        assert!(draws.iter().all(|y| (0.0..=1.0).contains(&y[0])));
    }

    #[test]
    fn holder_audit() {
        let q = Quadrature1D::new(1.0, 0.0, (f64::NEG_INFINITY, f64::INFINITY), Perturbation::AbsSqrt { k: 1.0 }).unwrap();
        let audit = q.holder_audit();
        assert!(audit.passed, "{audit:?}");
        assert!(audit.observed > 0.9);
        let q = Quadrature1D::new(1.0, 0.0, (-5.0, 5.0), Perturbation::Cos { k: 0.5, omega: 2.0 }).unwrap();
        assert!(q.holder_audit().passed);
    }

    #[test]
    fn invalid_targets() {
        assert!(TargetModel::mixture_1d(vec![0.5, 0.6], vec![0.0, 1.0], 1.0).is_err());
        assert!(TargetModel::mixture_1d(vec![1.5, -0.5], vec![0.0, 1.0], 1.0).is_err());
        assert!(TargetModel::sphere(1).is_err());
        assert!(Quadrature1D::new(0.0, 0.0, (0.0, 1.0), Perturbation::Zero).is_err());
        assert!(Quadrature1D::new(1.0, 0.0, (1.0, 1.0), Perturbation::Zero).is_err());
        assert!(TargetModel::centered_gaussian(2, 1.0).unwrap().sample(0, 1).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_centred() {
        let target = TargetModel::gaussian(vec![1.0, -2.0], 4.0).unwrap();
        let a = target.sample(1, 11).unwrap();
        assert_eq!(a, target.sample(1, 11).unwrap());
        let n = 100_000;
        let draws = target.sample(n, 7).unwrap();
        for j in 0..2 {
            let m: f64 = draws.iter().map(|y| y[j]).sum::<f64>() / n as f64;
            assert!((m - [1.0, -2.0][j]).abs() <= 3.0 * 2.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn sphere_samples_on_sphere() {
        let draws = TargetModel::sphere(3).unwrap().sample(10_000, 5).unwrap();
        assert!(draws.iter().all(|y| (crate::linalg::norm(y) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn quadrature_samples_match_moments() {
        let t = TargetModel::holder_half(1.0).unwrap();
        let n = 50_000;
        let draws = t.sample(n, 9).unwrap();
        let m: f64 = draws.iter().map(|y| y[0]).sum::<f64>() / n as f64;
        let m2: f64 = draws.iter().map(|y| y[0] * y[0]).sum::<f64>() / n as f64;
        assert!(m.abs() < 4.0 * (m2 / n as f64).sqrt());
        let exact = t.second_moment().unwrap();
        assert!((m2 - exact).abs() < 0.05 * exact);
    }

    fn numeric_score_jac(target: &TargetModel, sv: &ScheduleValues, x: &[f64]) -> DMatrix<f64> {
        let d = x.len();
        let h = 1e-5;
        let mut jac = DMatrix::zeros(d, d);
        for j in 0..d {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let sp = target.posterior(sv, &xp).unwrap().score;
            let sm = target.posterior(sv, &xm).unwrap().score;
            jac.set_column(j, &((sp - sm) / (2.0 * h)));
        }
        jac
    }

    fn arb_target() -> impl Strategy<Value = TargetModel> {
        prop_oneof![
            (0.3f64..3.0).prop_map(|s| TargetModel::gaussian(vec![0.5, -0.2], s * s).unwrap()),
            (0.05f64..1.0).prop_map(|v| TargetModel::mixture(
                vec![0.3, 0.7],
                vec![vec![-1.0, 0.5], vec![1.0, 0.0]],
                v
            )
            .unwrap()),
        ]
    }

    fn arb_schedule() -> impl Strategy<Value = Schedule> {
        prop_oneof![
            Just(Schedule::lipman_linear()),
            Just(Schedule::rescaled_diffusion()),
            Just(Schedule::stochastic_interpolant(0.5, 1.0).unwrap()),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn score_identity(target in arb_target(), s in arb_schedule(), t in 0.01f64..0.99, x0 in -3.0f64..3.0, x1 in -3.0f64..3.0) {
            let sv = s.eval(t).unwrap();
            let p = target.posterior(&sv, &[x0, x1]).unwrap();
            let g2 = sv.gbar * sv.gbar;
            for (j, x) in [x0, x1].iter().enumerate() {
                let via_mu = (sv.f * p.mu[j] - x) / g2;
                prop_assert!((p.score[j] - via_mu).abs() <= 1e-9 * (1.0 + p.score[j].abs()));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn score_jacobian_matches_finite_differences(target in arb_target(), s in arb_schedule(), t in 0.05f64..0.95, x0 in -2.0f64..2.0, x1 in -2.0f64..2.0) {
            let sv = s.eval(t).unwrap();
            let x = [x0, x1];
            let p = target.posterior(&sv, &x).unwrap();
            let fd = numeric_score_jac(&target, &sv, &x);
            let scale = p.score_jac.norm().max(1.0);
            prop_assert!((&p.score_jac - &fd).norm() <= 1e-5 * scale);
        }
    }
}
