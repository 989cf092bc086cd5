//! Interpolation schedules `X_t = f_t Y + g_t X_0 + σ_t ξ` and their reduced
//! form `X_t = f_t Y + ḡ_t ξ` with `ḡ_t = sqrt(g_t² + σ_t²)`.
//!
//! Built-in families carry analytic first and second derivatives. Custom
//! schedules built from closures fall back on five-point finite differences.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Finite-difference step for schedules without analytic derivatives.
pub const FD_STEP: f64 = 1e-5;
/// Within this distance of 0 or 1 the stencils become one-sided.
pub const FD_BOUNDARY: f64 = 5e-5;

/// Model family a schedule belongs to; selects the assumption checklist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    LipmanLinear,
    LipmanCustom,
    StochasticInterpolant,
    RescaledDiffusion,
}

impl Family {
    pub fn is_flow(self) -> bool {
        !matches!(self, Family::RescaledDiffusion)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::LipmanLinear => "lipman-linear",
            Family::LipmanCustom => "lipman-custom",
            Family::StochasticInterpolant => "interpolant",
            Family::RescaledDiffusion => "diffusion",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Numeric parameters attached to a schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    /// terminal exponent of `ḡ_t ≈ (1-t)^p`
    pub p: f64,
    /// regime split time
    pub t0: f64,
    /// non-degeneracy level
    pub gamma: f64,
    /// noise-peak time (stochastic interpolant)
    pub delta: f64,
    /// noise amplitude (stochastic interpolant)
    pub eta: f64,
    /// bound used by the interpolant balance check
    pub k_bound: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self { p: 1.0, t0: 0.5, gamma: 0.2, delta: 0.5, eta: 1.0, k_bound: 10.0 }
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    LipmanLinear,
    /// f = t, σ = (1 - t)^p
    LipmanPower,
    /// f = t², g = (1 - t)², σ = η t (1 - t) e^{λ t} with λ placing the peak at δ
    Interpolant { lambda: f64 },
    RescaledDiffusion,
    Custom { f: ScalarFn, g: ScalarFn, sigma: ScalarFn },
}

/// A time schedule `(f, g, σ)` on `[0, 1]`. Immutable once built.
#[derive(Clone)]
pub struct Schedule {
    family: Family,
    params: ScheduleParams,
    kind: Kind,
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Schedule")
            .field("family", &self.family)
            .field("params", &self.params)
            .field("analytic", &self.has_analytic_derivatives())
            .finish()
    }
}

/// Value and first two derivatives of a scalar function of time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet {
    fn new(v: f64, d1: f64, d2: f64) -> Self {
        Self { v, d1, d2 }
    }
}

/// Everything the drift assembly needs at a single time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleValues {
    pub t: f64,
    pub f: f64,
    pub f1: f64,
    pub f2: f64,
    pub gbar: f64,
    pub gbar1: f64,
    pub gbar2: f64,
    /// `ḡ'/ḡ`
    pub a: f64,
    /// `f' - a f`
    pub c: f64,
}

impl ScheduleValues {
    /// Assembles the derived coefficients from raw jets of `f` and `ḡ`.
    pub fn from_jets(t: f64, f: Jet, gbar: Jet) -> Result<Self> {
        if !(gbar.v > 0.0) {
            return Err(Error::OutOfDomain { what: "effective noise scale is zero", t });
        }
        let a = gbar.d1 / gbar.v;
        let c = f.d1 - a * f.v;
        let out = Self { t, f: f.v, f1: f.d1, f2: f.d2, gbar: gbar.v, gbar1: gbar.d1, gbar2: gbar.d2, a, c };
        if [out.f, out.f1, out.gbar, out.gbar1, out.a, out.c].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "schedule derivatives", step: None });
        }
        Ok(out)
    }

    /// Reduced-model values of the reversed Ornstein–Uhlenbeck path on
    /// `[0, horizon]`: `f = θ(t) = e^{-(T-t)}`, `ḡ = sqrt(1 - θ²)`.
    pub fn reversed_ou(horizon: f64, t: f64) -> Result<Self> {
        let theta = (-(horizon - t)).exp();
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::OutOfDomain { what: "reversed OU scale θ(t) outside (0,1)", t });
        }
        // θ' = θ, θ'' = θ
        let f = Jet::new(theta, theta, theta);
        let s2 = 1.0 - theta * theta;
        let g = s2.sqrt();
        let g1 = -theta * theta / g;
        // d/dt(-θ² (1-θ²)^{-1/2}) = -2θ²/g - θ⁴/g³
        let g2 = -2.0 * theta * theta / g - theta.powi(4) / (g * s2);
        Self::from_jets(t, f, Jet::new(g, g1, g2))
    }

    /// `a' = ḡ''/ḡ - (ḡ'/ḡ)²`.
    pub fn a_prime(&self) -> f64 {
        self.gbar2 / self.gbar - self.a * self.a
    }

    /// `c' = f'' - a' f - a f'`.
    pub fn c_prime(&self) -> f64 {
        self.f2 - self.a_prime() * self.f - self.a * self.f1
    }

    pub fn has_second_derivatives(&self) -> bool {
        self.f2.is_finite() && self.gbar2.is_finite()
    }
}

/// How derivatives are obtained by [`Schedule::eval_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivatives {
    /// analytic when available, finite differences otherwise
    Auto,
    FiniteDifference,
}

impl Schedule {
    pub fn lipman_linear() -> Self {
        Self { family: Family::LipmanLinear, params: ScheduleParams::default(), kind: Kind::LipmanLinear }
    }

    /// Lipman path with `f = t` and `σ = (1-t)^p`.
    pub fn lipman_power(p: f64) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::InvalidParameters(format!("terminal exponent p must be positive, got {p}")));
        }
        let params = ScheduleParams { p, ..ScheduleParams::default() };
        Ok(Self { family: Family::LipmanCustom, params, kind: Kind::LipmanPower })
    }

    /// Stochastic interpolant with `f = t²`, `g = (1-t)²` and noise
    /// `σ = η t(1-t) e^{λt}`, where `λ = 1/(1-δ) - 1/δ` puts the noise peak at `δ`.
    pub fn stochastic_interpolant(delta: f64, eta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameters(format!("noise peak δ must lie in (0,1), got {delta}")));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameters(format!("noise amplitude η must be positive, got {eta}")));
        }
        let lambda = 1.0 / (1.0 - delta) - 1.0 / delta;
        let params = ScheduleParams { delta, eta, ..ScheduleParams::default() };
        Ok(Self { family: Family::StochasticInterpolant, params, kind: Kind::Interpolant { lambda } })
    }

    pub fn rescaled_diffusion() -> Self {
        Self { family: Family::RescaledDiffusion, params: ScheduleParams::default(), kind: Kind::RescaledDiffusion }
    }

    /// User-supplied `(f, g, σ)`; derivatives by finite differences.
    pub fn custom<F, G, S>(family: Family, f: F, g: G, sigma: S) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        G: Fn(f64) -> f64 + Send + Sync + 'static,
        S: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            family,
            params: ScheduleParams::default(),
            kind: Kind::Custom { f: Arc::new(f), g: Arc::new(g), sigma: Arc::new(sigma) },
        }
    }

    pub fn with_params(mut self, params: ScheduleParams) -> Self {
        // the built-in shapes own p/δ/η; keep those consistent
        match self.kind {
            Kind::LipmanPower => self.params = ScheduleParams { p: self.params.p, ..params },
            Kind::Interpolant { .. } => {
                self.params = ScheduleParams { delta: self.params.delta, eta: self.params.eta, ..params }
            }
            _ => self.params = params,
        }
        self
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    pub fn has_analytic_derivatives(&self) -> bool {
        !matches!(self.kind, Kind::Custom { .. })
    }

    /// Raw `(f, g, σ)` at `t`, with no positivity requirement.
    pub fn raw(&self, t: f64) -> (f64, f64, f64) {
        match &self.kind {
            Kind::LipmanLinear => (t, 0.0, 1.0 - t),
            Kind::LipmanPower => (t, 0.0, (1.0 - t).max(0.0).powf(self.params.p)),
            Kind::Interpolant { lambda } => {
                let s = 1.0 - t;
                (t * t, s * s, self.params.eta * t * s * (lambda * t).exp())
            }
            Kind::RescaledDiffusion => (t, 0.0, (1.0 - t * t).max(0.0).sqrt()),
            Kind::Custom { f, g, sigma } => (f(t), g(t), sigma(t)),
        }
    }

    /// `ḡ_t = sqrt(g_t² + σ_t²)`.
    pub fn gbar(&self, t: f64) -> f64 {
        let (_, g, s) = self.raw(t);
        g.hypot(s)
    }

    fn analytic_jets(&self, t: f64) -> Option<(Jet, Jet, Jet)> {
        let zero = Jet::new(0.0, 0.0, 0.0);
        match &self.kind {
            Kind::LipmanLinear => Some((Jet::new(t, 1.0, 0.0), zero, Jet::new(1.0 - t, -1.0, 0.0))),
            Kind::LipmanPower => {
                let p = self.params.p;
                let s = 1.0 - t;
                let sigma = Jet::new(s.powf(p), -p * s.powf(p - 1.0), p * (p - 1.0) * s.powf(p - 2.0));
                Some((Jet::new(t, 1.0, 0.0), zero, sigma))
            }
            Kind::Interpolant { lambda } => {
                let eta = self.params.eta;
                let s = 1.0 - t;
                let f = Jet::new(t * t, 2.0 * t, 2.0);
                let g = Jet::new(s * s, -2.0 * s, 2.0);
                // σ = η q e^{λt}, q = t - t², q' = 1 - 2t, q'' = -2
                let e = (lambda * t).exp();
                let q = t * s;
                let q1 = 1.0 - 2.0 * t;
                let sigma = Jet::new(
                    eta * q * e,
                    eta * e * (q1 + lambda * q),
                    eta * e * (-2.0 + 2.0 * lambda * q1 + lambda * lambda * q),
                );
                Some((f, g, sigma))
            }
            Kind::RescaledDiffusion => {
                let s2 = 1.0 - t * t;
                let s = s2.sqrt();
                let sigma = Jet::new(s, -t / s, -1.0 / (s * s2));
                Some((Jet::new(t, 1.0, 0.0), zero, sigma))
            }
            Kind::Custom { .. } => None,
        }
    }

    fn fd_jet(&self, t: f64, pick: impl Fn(&Self, f64) -> f64) -> Jet {
        let h = FD_STEP;
        let v = pick(self, t);
        if t - 2.0 * h < 0.0 || t < FD_BOUNDARY {
            // forward stencil
            let y: Vec<f64> = (0..5).map(|k| pick(self, t + k as f64 * h)).collect();
            let d1 = (-25.0 * y[0] + 48.0 * y[1] - 36.0 * y[2] + 16.0 * y[3] - 3.0 * y[4]) / (12.0 * h);
            let d2 = (35.0 * y[0] - 104.0 * y[1] + 114.0 * y[2] - 56.0 * y[3] + 11.0 * y[4]) / (12.0 * h * h);
            Jet::new(v, d1, d2)
        } else if t + 2.0 * h > 1.0 || t > 1.0 - FD_BOUNDARY {
            let y: Vec<f64> = (0..5).map(|k| pick(self, t - k as f64 * h)).collect();
            let d1 = (25.0 * y[0] - 48.0 * y[1] + 36.0 * y[2] - 16.0 * y[3] + 3.0 * y[4]) / (12.0 * h);
            let d2 = (35.0 * y[0] - 104.0 * y[1] + 114.0 * y[2] - 56.0 * y[3] + 11.0 * y[4]) / (12.0 * h * h);
            Jet::new(v, d1, d2)
        } else {
            let m2 = pick(self, t - 2.0 * h);
            let m1 = pick(self, t - h);
            let p1 = pick(self, t + h);
            let p2 = pick(self, t + 2.0 * h);
            let d1 = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
            let d2 = (-m2 + 16.0 * m1 - 30.0 * v + 16.0 * p1 - p2) / (12.0 * h * h);
            Jet::new(v, d1, d2)
        }
    }

    fn gbar_jet(g: Jet, s: Jet) -> Jet {
        let v = g.v.hypot(s.v);
        if v == 0.0 {
            return Jet::new(0.0, f64::NAN, f64::NAN);
        }
        let d1 = (g.v * g.d1 + s.v * s.d1) / v;
        let d2 = (g.d1 * g.d1 + g.v * g.d2 + s.d1 * s.d1 + s.v * s.d2) / v - d1 * d1 / v;
        Jet::new(v, d1, d2)
    }

    /// Evaluates every schedule quantity at `t`.
    pub fn eval(&self, t: f64) -> Result<ScheduleValues> {
        self.eval_with(t, Derivatives::Auto)
    }

    pub fn eval_with(&self, t: f64, mode: Derivatives) -> Result<ScheduleValues> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfDomain { what: "time outside [0, 1]", t });
        }
        if self.gbar(t) <= 0.0 {
            return Err(Error::OutOfDomain { what: "effective noise scale is zero", t });
        }
        let analytic = match mode {
            Derivatives::Auto => self.analytic_jets(t),
            Derivatives::FiniteDifference => None,
        };
        let (f, gbar) = match analytic {
            Some((f, g, s)) => (f, Self::gbar_jet(g, s)),
            None => (self.fd_jet(t, |s, u| s.raw(u).0), self.fd_jet(t, |s, u| s.gbar(u))),
        };
        ScheduleValues::from_jets(t, f, gbar)
    }
}

/// One checked condition of an assumption list.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub passed: bool,
    /// time at which the condition was first seen to fail
    pub witness: Option<f64>,
    pub detail: String,
}

/// Result of [`validate_assumptions`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub family: Family,
    pub conditions: Vec<Condition>,
    /// largest admissible non-degeneracy level found by the γ scan
    pub gamma_max: Option<f64>,
    /// smallest balance exponent `q` passing the interpolant check
    pub q_min: Option<f64>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn condition(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// Number of interior grid points used by [`validate_assumptions`].
pub const VALIDATION_POINTS: usize = 1001;
const ENDPOINT_TOL: f64 = 1e-12;

fn grid_points() -> Vec<f64> {
    (1..=VALIDATION_POINTS).map(|i| i as f64 / (VALIDATION_POINTS + 1) as f64).collect()
}

fn cond(name: &str, witness: Option<f64>, detail: String) -> Condition {
    Condition { name: name.to_string(), passed: witness.is_none(), witness, detail }
}

fn endpoint(name: &str, t: f64, value: f64, target: f64) -> Condition {
    let ok = (value - target).abs() <= ENDPOINT_TOL;
    cond(name, (!ok).then_some(t), format!("value {value} at t = {t}, expected {target}"))
}

/// First grid time where `pick` decreases (or increases when `up` is false).
fn monotone_witness(ts: &[f64], vals: &[f64], up: bool) -> Option<f64> {
    vals.windows(2).zip(ts.windows(2)).find_map(|(v, t)| {
        let bad = if up { v[1] < v[0] - 1e-14 } else { v[1] > v[0] + 1e-14 };
        bad.then_some(t[1])
    })
}

/// γ scan over `{0.01, …, 0.49}`: largest γ with `γ ≤ σ_½ ∧ f_½` and
/// `f_{1-γ}² ≥ σ_{1-γ}` (σ here is the effective scale ḡ).
pub fn largest_admissible_gamma(s: &Schedule) -> Option<f64> {
    (1..=49).rev().map(|k| k as f64 / 100.0).find(|&g| gamma_condition(s, g))
}

fn gamma_condition(s: &Schedule, gamma: f64) -> bool {
    let (f_half, _, _) = s.raw(0.5);
    let sig_half = s.gbar(0.5);
    let (f_late, _, _) = s.raw(1.0 - gamma);
    let sig_late = s.gbar(1.0 - gamma);
    gamma <= sig_half.min(f_half) && f_late * f_late >= sig_late
}

/// Checks the bullet conditions of the family's assumption on a uniform grid.
/// Failures are reported, never raised.
pub fn validate_assumptions(s: &Schedule) -> ValidationReport {
    let ts = grid_points();
    let raw: Vec<(f64, f64, f64)> = ts.iter().map(|&t| s.raw(t)).collect();
    let fs: Vec<f64> = raw.iter().map(|r| r.0).collect();
    let gs: Vec<f64> = raw.iter().map(|r| r.1).collect();
    let sig: Vec<f64> = raw.iter().map(|r| r.2).collect();
    let (f0, g0, s0) = s.raw(0.0);
    let (f1, g1, s1) = s.raw(1.0);

    let mut conditions = Vec::new();
    let mut gamma_max = None;
    let mut q_min = None;

    let positive_gbar = ts.iter().copied().find(|&t| !(s.gbar(t) > 0.0));
    conditions.push(cond("gbar>0 on (0,1)", positive_gbar, "effective noise scale positive on the grid".into()));
    conditions.push(cond("f nondecreasing", monotone_witness(&ts, &fs, true), "f checked on the grid".into()));
    conditions.push(endpoint("f_0=0", 0.0, f0, 0.0));
    conditions.push(endpoint("f_1=1", 1.0, f1, 1.0));

    match s.family() {
        Family::LipmanLinear | Family::LipmanCustom | Family::RescaledDiffusion => {
            if s.family() != Family::RescaledDiffusion {
                conditions.push(cond("g=0", ts.iter().zip(&gs).find(|(_, g)| **g != 0.0).map(|(t, _)| *t), "g vanishes".into()));
                conditions.push(cond("sigma nonincreasing", monotone_witness(&ts, &sig, false), "σ checked on the grid".into()));
                conditions.push(endpoint("sigma_0=1", 0.0, s0, 1.0));
                conditions.push(endpoint("sigma_1=0", 1.0, s1, 0.0));
            } else {
                let f_bad = ts.iter().zip(&fs).find(|(t, f)| (**f - **t).abs() > ENDPOINT_TOL).map(|(t, _)| *t);
                conditions.push(cond("f_t=t", f_bad, "diffusion mean schedule".into()));
                let s_bad = ts
                    .iter()
                    .zip(raw.iter())
                    .find(|(t, r)| r.1 != 0.0 || (r.2 - (1.0 - **t * **t).sqrt()).abs() > ENDPOINT_TOL)
                    .map(|(t, _)| *t);
                conditions.push(cond("sigma_t=sqrt(1-t^2)", s_bad, "diffusion noise schedule".into()));
            }
            gamma_max = largest_admissible_gamma(s);
            let gamma = s.params().gamma;
            let ok = gamma_condition(s, gamma);
            let (fl, _, _) = s.raw(1.0 - gamma);
            conditions.push(cond(
                "gamma condition",
                (!ok).then_some(1.0 - gamma),
                format!(
                    "γ = {gamma}: f_(1-γ)^2 = {} vs σ_(1-γ) = {}; largest admissible γ = {:?}",
                    fl * fl,
                    s.gbar(1.0 - gamma),
                    gamma_max
                ),
            ));
        }
        Family::StochasticInterpolant => {
            conditions.push(cond("g nonincreasing", monotone_witness(&ts, &gs, false), "g checked on the grid".into()));
            conditions.push(endpoint("g_0=1", 0.0, g0, 1.0));
            conditions.push(endpoint("g_1=0", 1.0, g1, 0.0));
            conditions.push(endpoint("sigma_0=0", 0.0, s0, 0.0));
            conditions.push(endpoint("sigma_1=0", 1.0, s1, 0.0));

            // single sign change of σ' at δ
            let dsig: Vec<f64> = ts
                .iter()
                .map(|&t| s.fd_jet(t, |sch, u| sch.raw(u).2).d1)
                .collect();
            let changes: Vec<f64> = dsig
                .windows(2)
                .zip(ts.windows(2))
                .filter(|(d, _)| (d[0] > 0.0) != (d[1] > 0.0))
                .map(|(_, t)| t[1])
                .collect();
            let delta = s.params().delta;
            let single = changes.len() == 1 && dsig[0] > 0.0 && (changes[0] - delta).abs() <= 2.0 / VALIDATION_POINTS as f64;
            conditions.push(cond(
                "sigma' single sign change at delta",
                (!single).then(|| changes.first().copied().unwrap_or(ts[0])),
                format!("sign changes of σ' at {changes:?}, δ = {delta}"),
            ));

            // balance exponent q
            let k = s.params().k_bound;
            let h = 1.0 / (VALIDATION_POINTS + 1) as f64;
            let wronskian: Vec<f64> = ts
                .iter()
                .map(|&t| {
                    let fj = s.fd_jet(t, |sch, u| sch.raw(u).0);
                    let gj = s.fd_jet(t, |sch, u| sch.raw(u).1);
                    (gj.d1 * fj.v - fj.d1 * gj.v).abs()
                })
                .collect();
            q_min = (0..=20).map(|i| i as f64 * 0.05).find(|&q| {
                let sup = wronskian.iter().zip(&sig).map(|(w, s)| w / s.powf(q)).fold(0.0, f64::max);
                let integral: f64 = sig.iter().map(|s| s.powf(q - 1.0) * h).sum();
                sup <= k && integral <= k
            });
            conditions.push(cond(
                "balance exponent q exists",
                q_min.is_none().then_some(ts[0]),
                format!("smallest q with |g'f - f'g| <= K σ^q and ∫σ^(q-1) <= K (K = {k}): {q_min:?}"),
            ));

            let gamma = s.params().gamma;
            let sum_bad = ts.iter().zip(fs.iter().zip(&gs)).find(|(_, (f, g))| *f + *g < gamma).map(|(t, _)| *t);
            conditions.push(cond("g+f>=gamma", sum_bad, format!("γ = {gamma}")));
            let early_bad = ts.iter().zip(&gs).find(|(t, g)| **t < delta && **g < gamma).map(|(t, _)| *t);
            conditions.push(cond("g>=gamma on (0,delta)", early_bad, format!("γ = {gamma}, δ = {delta}")));
        }
    }

    ValidationReport { family: s.family(), conditions, gamma_max, q_min }
}

/// Fitted terminal behaviour `ḡ_t ≈ (1-t)^p ℓ(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalExponent {
    pub p_hat: f64,
    pub ell_min: f64,
    pub ell_max: f64,
}

/// Number of window points used by [`terminal_exponent`].
pub const EXPONENT_FIT_POINTS: usize = 200;

/// Least-squares slope of `log ḡ_t` against `log(1-t)` on a window whose
/// points are uniformly spaced in `log(1-t)`.
pub fn terminal_exponent(s: &Schedule, window: (f64, f64)) -> Result<TerminalExponent> {
    terminal_exponent_with(s, window, EXPONENT_FIT_POINTS)
}

pub fn terminal_exponent_with(s: &Schedule, window: (f64, f64), points: usize) -> Result<TerminalExponent> {
    let (lo, hi) = window;
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(Error::InvalidParameters(format!("fit window ({lo}, {hi}) must satisfy 0 < lo < hi < 1")));
    }
    if points < 10 {
        return Err(Error::DegenerateFit(format!("{points} window points, need at least 10")));
    }
    let (u_hi, u_lo) = ((1.0 - lo).ln(), (1.0 - hi).ln());
    let mut xs = Vec::with_capacity(points);
    let mut ys = Vec::with_capacity(points);
    for i in 0..points {
        let u = u_lo + (u_hi - u_lo) * i as f64 / (points - 1) as f64;
        let t = 1.0 - u.exp();
        let g = s.gbar(t);
        if !(g > 0.0) {
            return Err(Error::OutOfDomain { what: "effective noise scale not positive on fit window", t });
        }
        xs.push(u);
        ys.push(g.ln());
    }
    let fit = crate::fit::least_squares(&xs, &ys)?;
    let (mut ell_min, mut ell_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for (u, y) in xs.iter().zip(&ys) {
        let ell = (y - fit.slope * u).exp();
        ell_min = ell_min.min(ell);
        ell_max = ell_max.max(ell);
    }
    Ok(TerminalExponent { p_hat: fit.slope, ell_min, ell_max })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn builtins() -> Vec<Schedule> {
        vec![
            Schedule::lipman_linear(),
            Schedule::lipman_power(2.0).unwrap(),
            Schedule::lipman_power(0.5).unwrap(),
            Schedule::stochastic_interpolant(0.5, 1.0).unwrap(),
            Schedule::stochastic_interpolant(0.3, 0.8).unwrap(),
            Schedule::rescaled_diffusion(),
        ]
    }

    #[test]
    fn diffusion_at_zero() {
        let v = Schedule::rescaled_diffusion().eval(0.0).unwrap();
        assert_eq!((v.f, v.gbar, v.a, v.c), (0.0, 1.0, 0.0, 1.0));
    }

    #[test]
    fn lipman_linear_at_half() {
        let v = Schedule::lipman_linear().eval(0.5).unwrap();
        assert!((v.a + 2.0).abs() < 1e-15);
        assert!((v.c - 2.0).abs() < 1e-15);
    }

    #[test]
    fn diffusion_at_half() {
        let v = Schedule::rescaled_diffusion().eval(0.5).unwrap();
        assert!((v.f - 0.5).abs() < 1e-15);
        assert!((v.gbar - 3f64.sqrt() / 2.0).abs() < 1e-15);
        assert!((v.a + 2.0 / 3.0).abs() < 1e-15);
        assert!((v.c - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn terminal_noise_is_out_of_domain() {
        let err = Schedule::lipman_linear().eval(1.0).unwrap_err();
        assert!(matches!(err, Error::OutOfDomain { .. }));
        let err = Schedule::stochastic_interpolant(0.5, 1.0).unwrap().eval(1.0).unwrap_err();
        assert!(matches!(err, Error::OutOfDomain { .. }));
    }

    #[test]
    fn coefficient_identities_hold_on_grid() {
        for s in builtins() {
            for &t in grid_points().iter().step_by(7) {
                let v = s.eval(t).unwrap();
                assert!((v.a * v.gbar - v.gbar1).abs() <= 1e-10 * (1.0 + v.gbar1.abs()), "{:?} t={t}", s.family());
                assert!((v.c + v.a * v.f - v.f1).abs() <= 1e-10 * (1.0 + v.f1.abs()));
            }
        }
    }

    #[test]
    fn diffusion_is_variance_preserving() {
        let s = Schedule::rescaled_diffusion();
        for &t in &grid_points() {
            let v = s.eval(t).unwrap();
            assert!((v.f * v.f + v.gbar * v.gbar - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let mut state = 0x9e3779b97f4a7c15u64;
        for s in builtins() {
            for _ in 0..100 {
                // splitmix64 for reproducible interior times
                state = state.wrapping_add(0x9e3779b97f4a7c15);
                let mut z = state;
                z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
                z ^= z >> 31;
                let t = 0.02 + 0.96 * (z >> 11) as f64 / (1u64 << 53) as f64;
                let an = s.eval(t).unwrap();
                let fd = s.eval_with(t, Derivatives::FiniteDifference).unwrap();
                let rel = (an.gbar1 - fd.gbar1).abs() / an.gbar1.abs().max(1e-3);
                assert!(rel <= 1e-6, "{:?} t={t} analytic {} fd {}", s.family(), an.gbar1, fd.gbar1);
            }
        }
    }

    #[test]
    fn custom_schedule_uses_finite_differences() {
        let s = Schedule::custom(Family::LipmanCustom, |t| t * t, |_| 0.0, |t| 1.0 - t);
        assert!(!s.has_analytic_derivatives());
        let v = s.eval(0.3).unwrap();
        assert!((v.f1 - 0.6).abs() < 1e-8);
        assert!((v.f2 - 2.0).abs() < 1e-4);
        // one-sided stencil next to the boundary
        let v = s.eval(1e-6).unwrap();
        assert!((v.f1 - 2e-6).abs() < 1e-8);
    }

    #[test]
    fn reversed_ou_matches_closed_form() {
        let v = ScheduleValues::reversed_ou(2.0, 1.5).unwrap();
        let th = (-0.5f64).exp();
        assert!((v.f - th).abs() < 1e-15);
        assert!((v.gbar - (1.0 - th * th).sqrt()).abs() < 1e-15);
        assert!(ScheduleValues::reversed_ou(2.0, 2.0).is_err());
    }

    #[test]
    fn validate_diffusion_with_gamma_one_fifth() {
        let s = Schedule::rescaled_diffusion().with_params(ScheduleParams { gamma: 0.2, ..Default::default() });
        let r = validate_assumptions(&s);
        assert!(r.all_passed(), "{r:#?}");
        assert_eq!(r.gamma_max, Some(0.21));
    }

    #[test]
    fn validate_lipman_linear_gamma_scan() {
        let s = Schedule::lipman_linear().with_params(ScheduleParams { gamma: 0.3, ..Default::default() });
        let r = validate_assumptions(&s);
        assert!(r.all_passed(), "{r:#?}");
        // (1-γ)² >= 1-γ  ⇔  γ <= (3-√5)/2 ≈ 0.382
        assert_eq!(r.gamma_max, Some(0.38));
        let s = Schedule::lipman_linear().with_params(ScheduleParams { gamma: 0.5, ..Default::default() });
        assert!(!validate_assumptions(&s).condition("gamma condition").unwrap().passed);
    }

    #[test]
    fn validate_flags_nonzero_terminal_noise() {
        let s = Schedule::custom(Family::LipmanCustom, |t| t, |_| 0.0, |t| 1.0 - 0.9 * t);
        let r = validate_assumptions(&s);
        let c = r.condition("sigma_1=0").unwrap();
        assert!(!c.passed);
        assert_eq!(c.witness, Some(1.0));
    }

    #[test]
    fn validate_interpolant() {
        let s = Schedule::stochastic_interpolant(0.5, 1.0).unwrap();
        let r = validate_assumptions(&s);
        assert!(r.all_passed(), "{r:#?}");
        let q = r.q_min.unwrap();
        assert!(q > 0.0 && q <= 1.0);
        let s = Schedule::stochastic_interpolant(0.3, 1.0).unwrap();
        assert!(validate_assumptions(&s).all_passed());
    }

    #[test]
    fn terminal_exponent_lipman_linear() {
        let e = terminal_exponent(&Schedule::lipman_linear(), (0.9, 0.999)).unwrap();
        assert!((e.p_hat - 1.0).abs() < 1e-6);
        assert!((e.ell_min - 1.0).abs() < 1e-9 && (e.ell_max - 1.0).abs() < 1e-9);
    }

    #[test]
    fn terminal_exponent_diffusion() {
        // ḡ = sqrt(1-t) sqrt(1+t); the slowly varying factor biases the
        // finite-window slope slightly below 1/2 (independent fit: 0.495806)
        let e = terminal_exponent(&Schedule::rescaled_diffusion(), (0.9, 0.999)).unwrap();
        assert!((e.p_hat - 0.495806).abs() < 1e-5, "{}", e.p_hat);
        assert!((e.p_hat - 0.5).abs() < 5e-3);
        assert!(e.ell_min > 1.3 && e.ell_max < 1.5);
    }

    #[test]
    fn terminal_exponent_flat_and_degenerate() {
        let s = Schedule::custom(Family::LipmanCustom, |t| t, |_| 0.0, |_| 1.0);
        let e = terminal_exponent(&s, (0.9, 0.999)).unwrap();
        assert!(e.p_hat.abs() < 1e-12);
        assert!(matches!(
            terminal_exponent_with(&s, (0.9, 0.999), 5),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn power_family_exponent() {
        let e = terminal_exponent(&Schedule::lipman_power(2.0).unwrap(), (0.9, 0.999)).unwrap();
        assert!((e.p_hat - 2.0).abs() < 1e-9);
    }
}
