//! Regularity profiles of the velocity field over time: one-sided Lipschitz
//! (`λ_max` of the symmetrised Jacobian), two-sided Lipschitz (operator
//! norm) and time-Lipschitz (`‖∂_t v‖/(√d + ‖x‖)`), each a supremum over a
//! finite probe set.
//!
//! A finite probe set only bounds the true supremum from below. The
//! verification contract is stability under probe doubling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::driftfield;
use crate::error::{Error, Result};
use crate::fit::{least_squares, LinearFit};
use crate::grids::GeometricGrid;
use crate::linalg;
use crate::schedules::Schedule;
use crate::targets::TargetModel;

/// Where the suprema are taken.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeSpec {
    /// Tensor lattice with `count` points per axis on `[-radius, radius]^d`
    /// when it has at most [`LATTICE_MAX_POINTS`] points; otherwise `count`
    /// points along every coordinate axis and along the main diagonal.
    LatticeBox { radius: f64, count: usize },
    /// Samples of the marginal `X_t = f_t Y + ḡ_t ξ`, with `(Y, ξ)` drawn once
    /// so the probes move continuously in `t`.
    TargetSamples { n: usize, seed: u64 },
    /// `count` points on the first coordinate axis in `[-radius, radius]`.
    Axis1D { radius: f64, count: usize },
}

pub const LATTICE_MAX_POINTS: usize = 4096;

impl ProbeSpec {
    /// The same kind of probe set with about twice the points. Lattices are
    /// refined by bisection so the old points stay in the new set.
    pub fn doubled(&self) -> Self {
        let refine = |count: usize| if count > 1 { 2 * count - 1 } else { 3 };
        match *self {
            ProbeSpec::LatticeBox { radius, count } => ProbeSpec::LatticeBox { radius, count: refine(count) },
            ProbeSpec::TargetSamples { n, seed } => ProbeSpec::TargetSamples { n: 2 * n, seed },
            ProbeSpec::Axis1D { radius, count } => ProbeSpec::Axis1D { radius, count: refine(count) },
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

enum Probes {
    Fixed(Vec<Vec<f64>>),
    Marginal { ys: Vec<Vec<f64>>, xis: Vec<Vec<f64>> },
}

impl Probes {
    fn build(spec: &ProbeSpec, target: &TargetModel) -> Result<Self> {
        let d = target.dim();
        match *spec {
            ProbeSpec::LatticeBox { radius, count } => {
                if count == 0 {
                    return Err(Error::InvalidParameters("empty lattice".into()));
                }
                let axis = linspace(-radius, radius, count);
                let full = (count as f64).powi(d as i32) <= LATTICE_MAX_POINTS as f64;
                let mut pts = Vec::new();
                if full {
                    let total = count.pow(d as u32);
                    for mut idx in 0..total {
                        let mut p = vec![0.0; d];
                        for c in p.iter_mut() {
                            *c = axis[idx % count];
                            idx /= count;
                        }
                        pts.push(p);
                    }
                } else {
                    for j in 0..d {
                        for &a in &axis {
                            let mut p = vec![0.0; d];
                            p[j] = a;
                            pts.push(p);
                        }
                    }
                    let scale = 1.0 / (d as f64).sqrt();
                    for &a in &axis {
                        pts.push(vec![a * scale; d]);
                    }
                }
                Ok(Probes::Fixed(pts))
            }
            ProbeSpec::Axis1D { radius, count } => {
                if count == 0 {
                    return Err(Error::InvalidParameters("empty axis probe".into()));
                }
                Ok(Probes::Fixed(
                    linspace(-radius, radius, count)
                        .into_iter()
                        .map(|a| {
                            let mut p = vec![0.0; d];
                            p[0] = a;
                            p
                        })
                        .collect(),
                ))
            }
            ProbeSpec::TargetSamples { n, seed } => {
                let ys = target.sample(n, seed)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(1);
                let xis = (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
                Ok(Probes::Marginal { ys, xis })
            }
        }
    }

    fn len(&self) -> usize {
        match self {
            Probes::Fixed(p) => p.len(),
            Probes::Marginal { ys, .. } => ys.len(),
        }
    }

    fn point(&self, i: usize, f: f64, gbar: f64) -> Vec<f64> {
        match self {
            Probes::Fixed(p) => p[i].clone(),
            Probes::Marginal { ys, xis } => ys[i].iter().zip(&xis[i]).map(|(y, z)| f * y + gbar * z).collect(),
        }
    }
}

/// Suprema over the probe set at each time.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityProfile {
    pub times: Vec<f64>,
    pub lambda_max: Vec<f64>,
    pub op_norm: Vec<f64>,
    pub time_slope: Vec<f64>,
    pub probes: ProbeSpec,
    pub probe_count: usize,
}

struct ProbeValue {
    lambda: f64,
    op: f64,
    slope: f64,
}

/// Profile nodes refined geometrically toward `t = 1`: the nodes of a
/// geometric grid on `[0, τ]`.
pub fn default_time_grid(tau: f64, n: usize) -> Result<Vec<f64>> {
    Ok(GeometricGrid::unit(tau, n)?.nodes)
}

/// Evaluates the three profiles at every time and probe. Work is spread over
/// `(t, probe)` pairs; the max-reduction is order independent, so the output
/// does not depend on the thread count.
pub fn profile(target: &TargetModel, schedule: &Schedule, times: &[f64], probes: &ProbeSpec) -> Result<RegularityProfile> {
    let set = Probes::build(probes, target)?;
    let m = set.len();
    let d = target.dim();
    let sqrt_d = (d as f64).sqrt();
    let values: Vec<ProbeValue> = (0..times.len() * m)
        .into_par_iter()
        .map(|idx| {
            let t = times[idx / m];
            let sv = schedule.eval(t)?;
            let x = set.point(idx % m, sv.f, sv.gbar);
            let ev = driftfield::evaluate(target, schedule, t, &x)?;
            let op = linalg::op_norm(&ev.jac);
            let slope = ev.dtv.norm() / (sqrt_d + linalg::norm(&x));
            if !(ev.lambda_max.is_finite() && op.is_finite() && slope.is_finite()) {
                return Err(Error::NonFinite { what: "regularity profile", step: Some(idx / m) });
            }
            Ok(ProbeValue { lambda: ev.lambda_max, op, slope })
        })
        .collect::<Result<_>>()?;
    let mut out = RegularityProfile {
        times: times.to_vec(),
        lambda_max: Vec::with_capacity(times.len()),
        op_norm: Vec::with_capacity(times.len()),
        time_slope: Vec::with_capacity(times.len()),
        probes: probes.clone(),
        probe_count: m,
    };
    for chunk in values.chunks(m) {
        out.lambda_max.push(chunk.iter().map(|v| v.lambda).fold(f64::NEG_INFINITY, f64::max));
        out.op_norm.push(chunk.iter().map(|v| v.op).fold(0.0, f64::max));
        out.time_slope.push(chunk.iter().map(|v| v.slope).fold(0.0, f64::max));
    }
    Ok(out)
}

/// Trapezoidal integrals of the `λ_max` profile from `z` to the last time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaIntegral {
    pub signed: f64,
    pub positive: f64,
}

/// `∫_z^τ λ̄_t dt` for the signed profile and its positive part; the
/// profile is interpolated linearly at `z`.
pub fn integral_lambda_max(profile: &RegularityProfile, z: f64) -> Result<LambdaIntegral> {
    trapezoid_from(&profile.times, &profile.lambda_max, z)
}

pub(crate) fn trapezoid_from(times: &[f64], values: &[f64], z: f64) -> Result<LambdaIntegral> {
    let n = times.len();
    if n == 0 || !(z >= times[0] && z <= times[n - 1]) {
        return Err(Error::InvalidParameters(format!("start {z} outside the profile's time range")));
    }
    let mut signed = 0.0;
    let mut positive = 0.0;
    for k in 0..n - 1 {
        let (t0, t1) = (times[k], times[k + 1]);
        if t1 <= z {
            continue;
        }
        let (mut a, mut va) = (t0, values[k]);
        let vb = values[k + 1];
        if t0 < z {
            va = values[k] + (vb - values[k]) * (z - t0) / (t1 - t0);
            a = z;
        }
        let h = t1 - a;
        signed += 0.5 * h * (va + vb);
        positive += positive_part_trapezoid(va, vb, h);
    }
    Ok(LambdaIntegral { signed, positive })
}

/// `∫ max(ℓ, 0)` over one panel where `ℓ` is the linear interpolant.
fn positive_part_trapezoid(va: f64, vb: f64, h: f64) -> f64 {
    match (va >= 0.0, vb >= 0.0) {
        (true, true) => 0.5 * h * (va + vb),
        (false, false) => 0.0,
        _ => {
            let (p, q) = if va >= 0.0 { (va, vb) } else { (vb, va) };
            0.5 * h * p * p / (p - q)
        }
    }
}

/// Least squares of `log value` against `log(1/(1-t))` over the times in
/// `window`.
pub fn exponent_fit(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<LinearFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &v) in times.iter().zip(values) {
        if t >= window.0 && t <= window.1 {
            if !(v > 0.0) {
                return Err(Error::DegenerateFit(format!("profile not positive at t = {t}")));
            }
            xs.push(-(1.0 - t).ln());
            ys.push(v.ln());
        }
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateFit(format!("{} profile points in window {window:?}", xs.len())));
    }
    least_squares(&xs, &ys)
}
