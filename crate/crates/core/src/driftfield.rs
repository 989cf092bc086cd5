//! Velocity field `v_t(x) = a_t x + c_t μ_t(x)`, its spatial Jacobian, its
//! time derivative, and the reverse-SDE drift.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::schedules::{Schedule, ScheduleValues};
use crate::targets::{PosteriorSummary, TargetModel};

/// Below this value of `f_t` the velocity uses the posterior-mean form.
pub const SCORE_FORM_MIN_F: f64 = 1e-8;
/// Spatial finite-difference step.
pub const FD_SPACE_STEP: f64 = 1e-5;
/// Temporal finite-difference step.
pub const FD_TIME_STEP: f64 = 1e-5;
/// Finite differences in time are only taken inside `(m, 1 - m)`.
pub const FD_TIME_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianMethod {
    /// differentiate the closed-form velocity
    Analytic,
    /// `(ḡ'/ḡ)Id - (ḡ'/ḡ³)f²Σ + (1/ḡ²)f'fΣ`
    CovarianceIdentity,
    FiniteDiff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeDerivativeMethod {
    /// `a'x + c'μ + c ∂_tμ`
    Decomposition,
    FiniteDiff,
}

fn velocity_from(sv: &ScheduleValues, x: &DVector<f64>, p: &PosteriorSummary) -> DVector<f64> {
    if sv.f > SCORE_FORM_MIN_F {
        let g2 = sv.gbar * sv.gbar;
        x * (sv.f1 / sv.f) + &p.score * (sv.f1 * g2 / sv.f - sv.gbar * sv.gbar1)
    } else {
        x * sv.a + &p.mu * sv.c
    }
}

/// `v_t(x)`; score form when `f_t > 1e-8`, posterior-mean form otherwise.
///
/// ```
/// use flowreg::{driftfield::velocity, Schedule, TargetModel};
/// // the standard Gaussian is stationary under the rescaled diffusion flow
/// let target = TargetModel::centered_gaussian(2, 1.0).unwrap();
/// let sv = Schedule::rescaled_diffusion().eval(0.4).unwrap();
/// let v = velocity(&target, &sv, &[1.0, -2.0]).unwrap();
/// assert!(v.norm() < 1e-14);
/// ```
pub fn velocity(target: &TargetModel, sv: &ScheduleValues, x: &[f64]) -> Result<DVector<f64>> {
    let p = target.posterior(sv, x)?;
    Ok(velocity_from(sv, &DVector::from_column_slice(x), &p))
}

/// `v_t(x) = a_t x + c_t μ_t(x)` regardless of `f_t`.
pub fn velocity_posterior_form(target: &TargetModel, sv: &ScheduleValues, x: &[f64]) -> Result<DVector<f64>> {
    let p = target.posterior(sv, x)?;
    Ok(DVector::from_column_slice(x) * sv.a + p.mu * sv.c)
}

fn analytic_jacobian(sv: &ScheduleValues, d: usize, p: &PosteriorSummary) -> DMatrix<f64> {
    let eye = DMatrix::<f64>::identity(d, d);
    if sv.f > SCORE_FORM_MIN_F {
        let g2 = sv.gbar * sv.gbar;
        eye * (sv.f1 / sv.f) + &p.score_jac * (sv.f1 * g2 / sv.f - sv.gbar * sv.gbar1)
    } else {
        eye * sv.a + &p.mu_jac * sv.c
    }
}

fn covariance_jacobian(sv: &ScheduleValues, d: usize, cov: &DMatrix<f64>) -> DMatrix<f64> {
    let g = sv.gbar;
    let eye = DMatrix::<f64>::identity(d, d);
    eye * (sv.gbar1 / g) - cov * (sv.gbar1 / (g * g * g) * sv.f * sv.f) + cov * (sv.f1 * sv.f / (g * g))
}

fn is_off_axis_sphere(target: &TargetModel, x: &[f64]) -> bool {
    matches!(target, TargetModel::SphereUniform { .. }) && x.iter().any(|v| *v != 0.0)
}

/// `∇v_t(x)`, with entry `(i, j) = ∂v_i/∂x_j`.
pub fn velocity_jacobian(
    target: &TargetModel,
    sv: &ScheduleValues,
    x: &[f64],
    method: JacobianMethod,
) -> Result<DMatrix<f64>> {
    let d = x.len();
    match method {
        JacobianMethod::Analytic => {
            let p = target.posterior(sv, x)?;
            Ok(analytic_jacobian(sv, d, &p))
        }
        JacobianMethod::CovarianceIdentity => {
            if is_off_axis_sphere(target, x) {
                return Err(Error::UnsupportedMethod(
                    "covariance identity for the sphere off the symmetry axis; use the sphere eigenvalues",
                ));
            }
            let p = target.posterior(sv, x)?;
            let cov = p.cov.ok_or(Error::UnsupportedMethod("target does not expose posterior covariance"))?;
            Ok(covariance_jacobian(sv, d, &cov))
        }
        JacobianMethod::FiniteDiff => {
            let h = FD_SPACE_STEP;
            let mut jac = DMatrix::zeros(d, d);
            let mut xs = x.to_vec();
            for j in 0..d {
                let mut col = DVector::zeros(d);
                for (k, w) in [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)] {
                    xs[j] = x[j] + k * h;
                    col += velocity(target, sv, &xs)? * w;
                }
                xs[j] = x[j];
                jac.set_column(j, &(col / (12.0 * h)));
            }
            Ok(jac)
        }
    }
}

/// `∂_t v_t(x)`.
pub fn velocity_time_derivative(
    target: &TargetModel,
    schedule: &Schedule,
    t: f64,
    x: &[f64],
    method: TimeDerivativeMethod,
) -> Result<DVector<f64>> {
    match method {
        TimeDerivativeMethod::Decomposition => {
            let sv = schedule.eval(t)?;
            let p = target.posterior(&sv, x)?;
            time_derivative_from(&sv, x, &p)
        }
        TimeDerivativeMethod::FiniteDiff => {
            if !(t > FD_TIME_MARGIN && t < 1.0 - FD_TIME_MARGIN) {
                return Err(Error::UnsupportedMethod(
                    "finite-difference time derivative too close to an endpoint; use the decomposition",
                ));
            }
            let h = FD_TIME_STEP;
            let mut acc = DVector::zeros(x.len());
            for (k, w) in [(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)] {
                let sv = schedule.eval(t + k * h)?;
                acc += velocity(target, &sv, x)? * w;
            }
            Ok(acc / (12.0 * h))
        }
    }
}

fn time_derivative_from(sv: &ScheduleValues, x: &[f64], p: &PosteriorSummary) -> Result<DVector<f64>> {
    if !sv.has_second_derivatives() {
        return Err(Error::SecondDerivativeUnavailable(sv.t));
    }
    let cov = p.cov.as_ref().ok_or(Error::UnsupportedMethod("target does not expose posterior covariance"))?;
    let cov_y_sq = p
        .cov_y_sq
        .as_ref()
        .ok_or(Error::UnsupportedMethod("target does not expose posterior third moments"))?;
    let g2 = sv.gbar * sv.gbar;
    let xv = DVector::from_column_slice(x);
    // ∇r with r = E[‖Y‖² | X_t = x]
    let grad_r = cov_y_sq * (sv.f / g2);
    let dmu = cov * &xv * ((sv.f1 - 2.0 * sv.a * sv.f) / g2) - grad_r * sv.c;
    Ok(&xv * sv.a_prime() + &p.mu * sv.c_prime() + dmu * sv.c)
}

/// Reverse-time drift `x + 2 s_t(x)` of the Ornstein–Uhlenbeck path.
/// `sv` must come from [`ScheduleValues::reversed_ou`].
pub fn reverse_sde_drift(target: &TargetModel, sv: &ScheduleValues, x: &[f64]) -> Result<DVector<f64>> {
    if !(sv.f > 0.0 && sv.f <= 1.0) {
        return Err(Error::OutOfDomain { what: "reversed OU scale θ(t) outside (0,1]", t: sv.t });
    }
    let p = target.posterior(sv, x)?;
    Ok(DVector::from_column_slice(x) + p.score * 2.0)
}

/// All drift quantities at one `(t, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftEvaluation {
    pub v: DVector<f64>,
    pub jac: DMatrix<f64>,
    pub dtv: DVector<f64>,
    /// top eigenvalue of `(jac + jacᵀ)/2`
    pub lambda_max: f64,
    pub score: DVector<f64>,
    pub mu: DVector<f64>,
}

/// Evaluates velocity, analytic Jacobian and decomposed time derivative
/// from a single posterior computation.
pub fn evaluate(target: &TargetModel, schedule: &Schedule, t: f64, x: &[f64]) -> Result<DriftEvaluation> {
    let sv = schedule.eval(t)?;
    let p = target.posterior(&sv, x)?;
    let xv = DVector::from_column_slice(x);
    let v = velocity_from(&sv, &xv, &p);
    let jac = analytic_jacobian(&sv, x.len(), &p);
    let dtv = time_derivative_from(&sv, x, &p)?;
    let lambda_max = linalg::lambda_max_sym(&jac);
    Ok(DriftEvaluation { v, jac, dtv, lambda_max, score: p.score, mu: p.mu })
}

/// Velocity and analytic Jacobian only (no time derivative).
pub fn velocity_and_jacobian(
    target: &TargetModel,
    sv: &ScheduleValues,
    x: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = target.posterior(sv, x)?;
    let xv = DVector::from_column_slice(x);
    Ok((velocity_from(sv, &xv, &p), analytic_jacobian(sv, x.len(), &p)))
}

/// Slope `k_t` of the linear velocity `v_t(x) = k_t x` of a centred
/// isotropic Gaussian target with variance `s²`.
pub fn gaussian_velocity_slope(sv: &ScheduleValues, s2: f64) -> f64 {
    let g2 = sv.gbar * sv.gbar;
    (sv.f * sv.f1 * s2 + sv.gbar * sv.gbar1) / (sv.f * sv.f * s2 + g2)
}
