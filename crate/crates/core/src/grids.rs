//! Geometric time grids, Euler and Euler–Maruyama samplers, exact Gaussian
//! law propagation for linear drifts, and early-stopping rules.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::driftfield;
use crate::error::{Error, Result};
use crate::quadrature::{integrate, Tolerance};
use crate::schedules::{Family, Schedule, ScheduleValues};
use crate::targets::TargetModel;

/// Time mesh whose steps are proportional to the remaining time,
/// `h_k = (1 - r)(T - t_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricGrid {
    pub tau: f64,
    pub horizon: f64,
    pub n: usize,
    pub r: f64,
    pub h_max: f64,
    pub nodes: Vec<f64>,
    pub steps: Vec<f64>,
}

impl GeometricGrid {
    /// ```
    /// let g = flowreg::grids::GeometricGrid::new(0.875, 1.0, 3).unwrap();
    /// assert_eq!(g.nodes, vec![0.0, 0.5, 0.75, 0.875]);
    /// assert_eq!(g.steps, vec![0.5, 0.25, 0.125]);
    /// ```
    pub fn new(tau: f64, horizon: f64, n: usize) -> Result<Self> {
        if !(tau > 0.0 && tau < horizon && horizon.is_finite()) {
            return Err(Error::InvalidParameters(format!("need 0 < τ < T, got τ = {tau}, T = {horizon}")));
        }
        if n == 0 {
            return Err(Error::InvalidParameters("grid needs at least one step".into()));
        }
        let log_r = ((horizon - tau) / horizon).ln() / n as f64;
        let r = log_r.exp();
        let h_max = -horizon * log_r.exp_m1();
        let mut nodes: Vec<f64> = (0..=n).map(|k| -horizon * (k as f64 * log_r).exp_m1()).collect();
        nodes[n] = tau;
        let steps = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self { tau, horizon, n, r, h_max, nodes, steps })
    }

    /// Grid of `n` steps on `[0, τ]` with `T = 1`.
    pub fn unit(tau: f64, n: usize) -> Result<Self> {
        Self::new(tau, 1.0, n)
    }
}

/// Isotropic Gaussian law `N(mean, var·Id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    pub mean: Vec<f64>,
    pub var: f64,
}

impl GaussianLaw {
    pub fn new(mean: Vec<f64>, var: f64) -> Result<Self> {
        if !(var >= 0.0) {
            return Err(Error::InvalidParameters(format!("variance must be nonnegative, got {var}")));
        }
        Ok(Self { mean, var })
    }

    pub fn standard(d: usize) -> Self {
        Self { mean: vec![0.0; d], var: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Early-stopping time and horizon `(τ, T)` for `N` steps.
///
/// Flow families use `τ = 1 - (log²N/N)^{1/min(p,1)}` and `T = 1`; the
/// diffusion family uses `T = log N` and `τ = T - N⁻²`.
pub fn select_tau(family: Family, n: usize, p: f64) -> Result<(f64, f64)> {
    if n < 3 {
        return Err(Error::NTooSmall(n));
    }
    let nf = n as f64;
    if family.is_flow() {
        if !(p > 0.0) {
            return Err(Error::InvalidParameters(format!("terminal exponent must be positive, got {p}")));
        }
        let q = p.min(1.0);
        let l = nf.ln();
        Ok((1.0 - (l * l / nf).powf(1.0 / q), 1.0))
    } else {
        let horizon = nf.ln();
        Ok((horizon - 1.0 / (nf * nf), horizon))
    }
}

/// A time-dependent vector field driving a sampler.
pub trait Drift: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()>;
    /// Slope `k_t` when the field is `v_t(x) = k_t x`.
    fn linear_slope(&self, _t: f64) -> Option<f64> {
        None
    }
}

/// Probability-flow velocity `v_t` of a target under a schedule.
pub struct FlowDrift<'a> {
    pub target: &'a TargetModel,
    pub schedule: &'a Schedule,
}

impl Drift for FlowDrift<'_> {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let sv = self.schedule.eval(t)?;
        let v = driftfield::velocity(self.target, &sv, x)?;
        out.copy_from_slice(v.as_slice());
        Ok(())
    }

    fn linear_slope(&self, t: f64) -> Option<f64> {
        match self.target {
            TargetModel::IsotropicGaussian { mean, var } if mean.iter().all(|m| *m == 0.0) => {
                let sv = self.schedule.eval(t).ok()?;
                Some(driftfield::gaussian_velocity_slope(&sv, *var))
            }
            _ => None,
        }
    }
}

/// Reverse-time Ornstein–Uhlenbeck drift `x + 2 s_t(x)` on `[0, horizon]`.
pub struct ReverseOuDrift<'a> {
    pub target: &'a TargetModel,
    pub horizon: f64,
}

impl Drift for ReverseOuDrift<'_> {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let sv = ScheduleValues::reversed_ou(self.horizon, t)?;
        let a = driftfield::reverse_sde_drift(self.target, &sv, x)?;
        out.copy_from_slice(a.as_slice());
        Ok(())
    }

    fn linear_slope(&self, t: f64) -> Option<f64> {
        match self.target {
            TargetModel::IsotropicGaussian { mean, var } if mean.iter().all(|m| *m == 0.0) => {
                let th = (-(self.horizon - t)).exp();
                Some(1.0 - 2.0 / (th * th * var + 1.0 - th * th))
            }
            _ => None,
        }
    }
}

/// Linear drift `v_t(x) = k(t) x`.
pub struct LinearDrift<F> {
    pub dim: usize,
    pub slope: F,
}

impl<F: Fn(f64) -> f64 + Sync> Drift for LinearDrift<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let k = (self.slope)(t);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = k * xi;
        }
        Ok(())
    }

    fn linear_slope(&self, t: f64) -> Option<f64> {
        Some((self.slope)(t))
    }
}

/// Diffusion amplitude `b_t` of the Euler–Maruyama scheme.
#[derive(Clone)]
pub enum Diffusion {
    Constant(f64),
    Function(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Diffusion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Diffusion::Constant(b) => write!(f, "Constant({b})"),
            Diffusion::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// Relative tolerance of the increment-variance quadrature.
pub const INCREMENT_QUAD_TOL: f64 = 1e-12;

impl Diffusion {
    /// `∫_{t0}^{t1} b_t² dt`.
    pub fn increment_variance(&self, t0: f64, t1: f64) -> Result<f64> {
        match self {
            Diffusion::Constant(b) => Ok(b * b * (t1 - t0)),
            Diffusion::Function(b) => integrate(|t| b(t).powi(2), t0, t1, Tolerance::relative(INCREMENT_QUAD_TOL)),
        }
    }

    pub fn increment_variances(&self, grid: &GeometricGrid) -> Result<Vec<f64>> {
        grid.nodes.windows(2).map(|w| self.increment_variance(w[0], w[1])).collect()
    }
}

/// A step where `|1 + h_k λ|` exceeded the stability threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityFlag {
    pub step: usize,
    pub t: f64,
    pub h: f64,
    pub lambda: f64,
    pub amplification: f64,
}

/// Per-run diagnostics of the samplers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SamplerReport {
    /// largest drift norm over particles at each step
    pub max_drift_norm: Vec<f64>,
    pub stability: Vec<StabilityFlag>,
}

/// Steps where `|1 + h_k λ_k| > 1 + 10 h_max`; never fatal.
pub fn stability_flags(grid: &GeometricGrid, lambdas: &[f64]) -> Vec<StabilityFlag> {
    let threshold = 1.0 + 10.0 * grid.h_max;
    grid.steps
        .iter()
        .zip(lambdas)
        .enumerate()
        .filter_map(|(k, (&h, &lambda))| {
            let amplification = (1.0 + h * lambda).abs();
            (amplification > threshold).then_some(StabilityFlag { step: k, t: grid.nodes[k], h, lambda, amplification })
        })
        .collect()
}

fn linear_flags<D: Drift + ?Sized>(drift: &D, grid: &GeometricGrid) -> Vec<StabilityFlag> {
    let slopes: Option<Vec<f64>> = grid.nodes[..grid.n].iter().map(|&t| drift.linear_slope(t)).collect();
    slopes.map(|k| stability_flags(grid, &k)).unwrap_or_default()
}

fn check_particles(particles: &[Vec<f64>], d: usize) -> Result<()> {
    if let Some(p) = particles.iter().find(|p| p.len() != d) {
        return Err(Error::LengthMismatch { left: p.len(), right: d });
    }
    Ok(())
}

fn reduce_norms(per_particle: Vec<Vec<f64>>, steps: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; steps];
    for norms in per_particle {
        for (o, v) in out.iter_mut().zip(norms) {
            *o = o.max(v);
        }
    }
    out
}

/// Explicit Euler `x ← x + h_k v_{t_k}(x)` over the grid, in place.
pub fn euler_ode<D: Drift + ?Sized>(drift: &D, grid: &GeometricGrid, particles: &mut [Vec<f64>]) -> Result<SamplerReport> {
    euler_maruyama_inner(drift, grid, particles, None)
}

/// Euler–Maruyama with exact Gaussian increments
/// `ξ_{k+1} ~ N(0, ∫_{t_k}^{t_{k+1}} b_t² dt · Id)`. Particle `i` draws from
/// stream `i` of a generator seeded with `seed`, so results do not depend
/// on how particles are scheduled across threads.
pub fn euler_maruyama_exact<D: Drift + ?Sized>(
    drift: &D,
    b: &Diffusion,
    grid: &GeometricGrid,
    particles: &mut [Vec<f64>],
    seed: u64,
) -> Result<SamplerReport> {
    let vars = b.increment_variances(grid)?;
    if vars.iter().all(|v| *v == 0.0) {
        return euler_maruyama_inner(drift, grid, particles, None);
    }
    euler_maruyama_inner(drift, grid, particles, Some((&vars, seed)))
}

fn euler_maruyama_inner<D: Drift + ?Sized>(
    drift: &D,
    grid: &GeometricGrid,
    particles: &mut [Vec<f64>],
    noise: Option<(&[f64], u64)>,
) -> Result<SamplerReport> {
    let d = drift.dim();
    check_particles(particles, d)?;
    let per_particle: Vec<Vec<f64>> = particles
        .par_iter_mut()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = noise.map(|(_, seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                rng
            });
            let mut v = vec![0.0; d];
            let mut norms = Vec::with_capacity(grid.n);
            for k in 0..grid.n {
                let (t, h) = (grid.nodes[k], grid.steps[k]);
                drift.eval(t, x, &mut v)?;
                norms.push(crate::linalg::norm(&v));
                for j in 0..d {
                    x[j] += h * v[j];
                }
                if let (Some(rng), Some((vars, _))) = (rng.as_mut(), noise) {
                    let sd = vars[k].sqrt();
                    for xj in x.iter_mut() {
                        let z: f64 = rng.sample(StandardNormal);
                        *xj += sd * z;
                    }
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { what: "sampler state", step: Some(k) });
                }
            }
            Ok(norms)
        })
        .collect::<Result<_>>()?;
    Ok(SamplerReport { max_drift_norm: reduce_norms(per_particle, grid.n), stability: linear_flags(drift, grid) })
}

/// Exact law of the Euler iterates of a linear drift `v_t(x) = k_t x`:
/// `mean ← (1 + h_k k_k) mean`, `var ← (1 + h_k k_k)² var + v_k`.
pub fn propagate_affine_law(slopes: &[f64], grid: &GeometricGrid, init: &GaussianLaw, noise_var: &[f64]) -> GaussianLaw {
    let mut law = init.clone();
    for k in 0..grid.n {
        let m = 1.0 + grid.steps[k] * slopes[k];
        law.mean.iter_mut().for_each(|v| *v *= m);
        law.var = m * m * law.var + noise_var.get(k).copied().unwrap_or(0.0);
    }
    law
}

/// Coupling bound `sqrt((1 - f_τ)² E‖Y‖² + d ḡ_τ²)` on the early-stopping
/// error. Only the schedule values are needed, so `τ = 1` is allowed.
pub fn early_stopping_bound(target: &TargetModel, schedule: &Schedule, tau: f64, d: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::OutOfDomain { what: "stopping time outside [0,1]", t: tau });
    }
    let m2 = target.second_moment()?;
    let (f, gbar) = (schedule.raw(tau).0, schedule.gbar(tau));
    Ok(((1.0 - f).powi(2) * m2 + d as f64 * gbar * gbar).sqrt())
}
