//! Flow map `x ↦ X_τ(x)` of the velocity field, its Jacobian, the Grönwall
//! certificate `exp(∫ λ̄)`, and audits of the Poincaré and log-Sobolev
//! inequalities transferred through a Lipschitz map.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::driftfield;
use crate::error::{Error, Result};
use crate::grids::GeometricGrid;
use crate::linalg;
use crate::quadrature::{integrate_vec_split, Tolerance};
use crate::regularity::{integral_lambda_max, RegularityProfile};
use crate::schedules::Schedule;
use crate::targets::TargetModel;

/// Default stopping time of flow integrations.
pub const DEFAULT_FLOW_TAU: f64 = 1.0 - 1e-4;

/// State of the joint `(x, ∇X_t)` integration.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMapState {
    pub x: DVector<f64>,
    pub jac: DMatrix<f64>,
    pub t: f64,
    /// `Σ h_k λ_max(∇v_{t_k}(x_k))` along the trajectory
    pub log_cert: f64,
}

impl FlowMapState {
    pub fn start(x0: &[f64]) -> Self {
        let d = x0.len();
        Self { x: DVector::from_column_slice(x0), jac: DMatrix::identity(d, d), t: 0.0, log_cert: 0.0 }
    }

    pub fn jac_norm(&self) -> f64 {
        linalg::op_norm(&self.jac)
    }
}

/// Explicit Euler on `ẋ = v_t(x)`, `J̇ = ∇v_t(x) J`, with the Jacobian taken
/// at the pre-update state.
pub fn integrate_flow(target: &TargetModel, schedule: &Schedule, grid: &GeometricGrid, x0: &[f64]) -> Result<FlowMapState> {
    let mut state = FlowMapState::start(x0);
    let d = x0.len();
    for k in 0..grid.n {
        let (t, h) = (grid.nodes[k], grid.steps[k]);
        let sv = schedule.eval(t)?;
        let (v, jac) = driftfield::velocity_and_jacobian(target, &sv, state.x.as_slice())?;
        state.log_cert += h * linalg::lambda_max_sym(&jac);
        state.jac = (DMatrix::identity(d, d) + jac * h) * &state.jac;
        state.x += v * h;
        state.t = grid.nodes[k + 1];
        if state.x.iter().chain(state.jac.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "flow map", step: Some(k) });
        }
    }
    Ok(state)
}

/// [`integrate_flow`] for many starting points in parallel.
pub fn integrate_flows(
    target: &TargetModel,
    schedule: &Schedule,
    grid: &GeometricGrid,
    x0s: &[Vec<f64>],
) -> Result<Vec<FlowMapState>> {
    x0s.par_iter().map(|x0| integrate_flow(target, schedule, grid, x0)).collect()
}

/// `exp(∫_z^τ λ̄_t dt)` from the signed profile integral.
pub fn lipschitz_certificate(profile: &RegularityProfile, z: f64) -> Result<f64> {
    Ok(integral_lambda_max(profile, z)?.signed.exp())
}

/// Smooth test functions with known derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunction {
    Constant(f64),
    Identity,
    Square,
    Sin(f64),
    Tanh,
}

impl TestFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TestFunction::Constant(c) => c,
            TestFunction::Identity => x,
            TestFunction::Square => x * x,
            TestFunction::Sin(w) => (w * x).sin(),
            TestFunction::Tanh => x.tanh(),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            TestFunction::Constant(_) => 0.0,
            TestFunction::Identity => 1.0,
            TestFunction::Square => 2.0 * x,
            TestFunction::Sin(w) => w * (w * x).cos(),
            TestFunction::Tanh => 1.0 - x.tanh().powi(2),
        }
    }

    pub fn name(&self) -> String {
        match *self {
            TestFunction::Constant(c) => format!("const({c})"),
            TestFunction::Identity => "x".into(),
            TestFunction::Square => "x^2".into(),
            TestFunction::Sin(w) => format!("sin({w}x)"),
            TestFunction::Tanh => "tanh(x)".into(),
        }
    }
}

/// `{x, x², sin x, sin 2x, sin 4x, tanh x}`.
pub fn default_test_family() -> Vec<TestFunction> {
    vec![
        TestFunction::Identity,
        TestFunction::Square,
        TestFunction::Sin(1.0),
        TestFunction::Sin(2.0),
        TestFunction::Sin(4.0),
        TestFunction::Tanh,
    ]
}

/// Both sides of the inequalities for one test function.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub name: String,
    pub variance: f64,
    pub dirichlet: f64,
    /// `Var(f) / ∫ f'²`, zero when both vanish
    pub ratio: f64,
    /// `Ent(f²)`
    pub entropy: f64,
    /// `Ent(f²) / ∫ f'²`
    pub lsi_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub lipschitz: f64,
    /// Poincaré constant `L²`
    pub poincare_bound: f64,
    /// log-Sobolev constant `2L²`
    pub lsi_bound: f64,
    pub entries: Vec<AuditEntry>,
    pub max_ratio: f64,
    pub max_lsi_ratio: f64,
    pub passed: bool,
    pub lsi_passed: bool,
}

const AUDIT_TOL: f64 = 1e-12;
const ZERO_VARIANCE: f64 = 1e-14;
/// Relative slack on the bounds absorbing quadrature error.
pub const AUDIT_SLACK: f64 = 1e-9;

/// One-dimensional reference density of the audit: the target itself in
/// 1-D, or the first-coordinate marginal of an isotropic Gaussian.
fn audit_density(target: &TargetModel) -> Result<(Box<dyn Fn(f64) -> f64 + Sync + '_>, f64, f64, Vec<f64>)> {
    match target {
        TargetModel::IsotropicGaussian { mean, var } => {
            let (m, s) = (mean[0], var.sqrt());
            let logp = move |y: f64| -0.5 * ((y - m) / s).powi(2);
            Ok((Box::new(logp), m - 40.0 * s, m + 40.0 * s, vec![m]))
        }
        TargetModel::Quadrature1D(q) => {
            let (lo, hi, mode) = q.prior_window();
            let mut breaks = q.breakpoints();
            breaks.push(mode);
            let peak = q.log_density(mode);
            Ok((Box::new(move |y| q.log_density(y) - peak), lo, hi, breaks))
        }
        _ => Err(Error::UnsupportedMethod("functional-inequality audit needs a Gaussian or 1-D quadrature target")),
    }
}

/// Computes `Var(f)`, `∫ f'²` and `Ent(f²)` under the target for every test
/// function and compares them with `L²` (Poincaré) and `2L²` (log-Sobolev).
pub fn poincare_audit(target: &TargetModel, lipschitz: f64, tests: &[TestFunction]) -> Result<AuditReport> {
    let (logp, lo, hi, breaks) = audit_density(target)?;
    let mut entries = Vec::with_capacity(tests.len());
    for test in tests {
        let m = integrate_vec_split(
            |y, out| {
                let w = logp(y).exp();
                let f = test.eval(y);
                let g = test.derivative(y);
                let f2 = f * f;
                out[0] = w;
                out[1] = w * f;
                out[2] = w * f2;
                out[3] = w * g * g;
                out[4] = if f2 > 0.0 { w * f2 * f2.ln() } else { 0.0 };
            },
            lo,
            hi,
            &breaks,
            5,
            Tolerance { rel: AUDIT_TOL, abs: 0.0 },
        )?;
        let z = m[0];
        let (mean, second, dirichlet, flogf) = (m[1] / z, m[2] / z, m[3] / z, m[4] / z);
        let variance = (second - mean * mean).max(0.0);
        let entropy = if second > 0.0 { (flogf - second * second.ln()).max(0.0) } else { 0.0 };
        let degenerate = variance <= ZERO_VARIANCE * second.max(1.0);
        let ratio = if degenerate { 0.0 } else { variance / dirichlet };
        let lsi_ratio = if degenerate { 0.0 } else { entropy / dirichlet };
        entries.push(AuditEntry { name: test.name(), variance, dirichlet, ratio, entropy, lsi_ratio });
    }
    let poincare_bound = lipschitz * lipschitz;
    let lsi_bound = 2.0 * poincare_bound;
    let max_ratio = entries.iter().map(|e| e.ratio).fold(0.0, f64::max);
    let max_lsi_ratio = entries.iter().map(|e| e.lsi_ratio).fold(0.0, f64::max);
    Ok(AuditReport {
        lipschitz,
        poincare_bound,
        lsi_bound,
        passed: max_ratio <= poincare_bound * (1.0 + AUDIT_SLACK),
        lsi_passed: max_lsi_ratio <= lsi_bound * (1.0 + AUDIT_SLACK),
        entries,
        max_ratio,
        max_lsi_ratio,
    })
}
