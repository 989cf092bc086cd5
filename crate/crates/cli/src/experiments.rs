//! The five experiments. Each returns a [`Report`]; nothing here touches
//! the file system.

use flowreg::driftfield::gaussian_velocity_slope;
use flowreg::fit::least_squares;
use flowreg::grids::{propagate_affine_law, select_tau, Diffusion, Drift, ReverseOuDrift};
use flowreg::metrics::w2_gaussian_isotropic;
use flowreg::regularity::{default_time_grid, integral_lambda_max, profile, RegularityProfile};
use flowreg::schedules::{terminal_exponent, validate_assumptions};
use flowreg::sphere::{bessel_ratio, sphere_eigenvalues, sphere_origin_jacobian};
use flowreg::transport::{default_test_family, integrate_flows, lipschitz_certificate, poincare_audit};
use flowreg::{Error, GaussianLaw, GeometricGrid, Schedule, TargetModel};
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::config::{self, Experiment, ExperimentConfig, Mode, TauRule};
use crate::error::CliError;
use crate::report::{fmt_f64, Criterion, Report, Table};

/// Profile horizon when the config does not give an explicit τ.
pub const REGULARITY_TAU: f64 = 0.999;
/// Flow horizon when the config does not give an explicit τ.
pub const TRANSPORT_TAU: f64 = 1.0 - 1e-4;
/// Relative change allowed in a profile envelope when probes are doubled.
pub const DOUBLING_TOL: f64 = 0.05;

pub fn run(exp: Experiment, cfg: &ExperimentConfig, tol_scale: f64) -> Result<Report, CliError> {
    match exp {
        Experiment::Validate => validate(cfg, tol_scale),
        Experiment::Regularity => regularity(cfg, tol_scale),
        Experiment::Converge => converge(cfg, tol_scale),
        Experiment::Transport => transport(cfg, tol_scale),
        Experiment::Sphere => sphere(cfg, tol_scale),
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn validate(cfg: &ExperimentConfig, scale: f64) -> Result<Report, CliError> {
    let s = config::family(&cfg.family)?;
    let rep = validate_assumptions(&s);
    let mut table = Table::new(&["condition", "passed", "witness"]);
    let mut criteria = Vec::new();
    let mut details = Map::new();
    for c in &rep.conditions {
        table.push(vec![c.name.clone(), c.passed.to_string(), opt(c.witness)]);
        criteria.push(Criterion::flag(c.name.clone(), c.passed));
        details.insert(c.name.clone(), json!(c.detail));
    }

    // Pointwise identities tying the drift coefficients to the schedule.
    let (mut res_a, mut res_c, mut res_vp) = (0.0f64, 0.0f64, 0.0f64);
    for i in 1..1000 {
        let sv = s.eval(i as f64 / 1000.0)?;
        res_a = res_a.max((sv.a * sv.gbar - sv.gbar1).abs() / (1.0 + sv.gbar1.abs()));
        res_c = res_c.max((sv.c + sv.a * sv.f - sv.f1).abs() / (1.0 + sv.f1.abs()));
        res_vp = res_vp.max((sv.f * sv.f + sv.gbar * sv.gbar - 1.0).abs());
    }
    criteria.push(Criterion::at_most("log-derivative identity", res_a, 1e-10 * scale));
    criteria.push(Criterion::at_most("drift offset identity", res_c, 1e-10 * scale));
    if !s.family().is_flow() {
        criteria.push(Criterion::at_most("variance preservation", res_vp, 1e-12 * scale));
    }
    let p_hat = terminal_exponent(&s, (0.9, 0.999)).ok().map(|e| e.p_hat);
    let results = json!({
        "family": s.family().name(),
        "gamma_max": rep.gamma_max,
        "q_min": rep.q_min,
        "terminal_exponent": p_hat,
        "details": details,
    });
    Ok(Report { experiment: "validate", table, results, criteria })
}

fn tau_or(cfg: &ExperimentConfig, default: f64) -> f64 {
    match cfg.tau_rule {
        TauRule::Explicit(t) => t,
        TauRule::Paper => default,
    }
}

/// `max_{t ∈ [0.5, τ]} value(t)·(1-t)^power`.
fn envelope(times: &[f64], values: &[f64], power: i32) -> f64 {
    times.iter().zip(values).filter(|(t, _)| **t >= 0.5).map(|(t, v)| v * (1.0 - t).powi(power)).fold(0.0, f64::max)
}

fn relative_change(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

fn gaussian_sd(target: &TargetModel) -> Option<f64> {
    match target {
        TargetModel::IsotropicGaussian { mean, var } if mean.iter().all(|m| *m == 0.0) => Some(var.sqrt()),
        _ => None,
    }
}

pub fn regularity(cfg: &ExperimentConfig, scale: f64) -> Result<Report, CliError> {
    let s = config::family(&cfg.family)?;
    let probes = config::probes(&cfg.probes, cfg.seed)?;
    let tau = tau_or(cfg, REGULARITY_TAU);
    let times = default_time_grid(tau, cfg.t_refine)?;
    let mut table = Table::new(&["d", "t", "lambda_max", "op_norm", "time_slope"]);
    let mut criteria = Vec::new();
    let mut per_dim = Vec::new();
    let mut integrals = Vec::new();
    for &d in &cfg.dims {
        let target = config::target(&cfg.target, d)?;
        let p = profile(&target, &s, &times, &probes)?;
        let q = profile(&target, &s, &times, &probes.doubled())?;
        for i in 0..p.times.len() {
            table.push(vec![
                d.to_string(),
                fmt_f64(p.times[i]),
                fmt_f64(p.lambda_max[i]),
                fmt_f64(p.op_norm[i]),
                fmt_f64(p.time_slope[i]),
            ]);
        }
        let li = integral_lambda_max(&p, 0.0)?;
        let (op_a, op_b) = (envelope(&p.times, &p.op_norm, 1), envelope(&q.times, &q.op_norm, 1));
        let (ts_a, ts_b) = (envelope(&p.times, &p.time_slope, 2), envelope(&q.times, &q.time_slope, 2));
        criteria.push(Criterion::flag(format!("eigenvalue below operator norm (d={d})"), eigen_below_op(&p) && eigen_below_op(&q)));
        criteria.push(Criterion::at_most(format!("op-norm envelope probe doubling (d={d})"), relative_change(op_a, op_b), DOUBLING_TOL * scale));
        criteria.push(Criterion::at_most(format!("time-slope envelope probe doubling (d={d})"), relative_change(ts_a, ts_b), DOUBLING_TOL * scale));
        let mut entry = json!({
            "d": d,
            "probe_count": p.probe_count,
            "integral_signed": li.signed,
            "integral_positive": li.positive,
            "op_envelope": op_a,
            "op_envelope_doubled": op_b,
            "time_slope_envelope": ts_a,
            "time_slope_envelope_doubled": ts_b,
        });
        if let Some(sd) = gaussian_sd(&target) {
            let sv = s.eval(tau)?;
            let exact = 0.5 * (sv.f * sv.f * sd * sd + sv.gbar * sv.gbar).ln();
            entry["integral_exact"] = json!(exact);
            criteria.push(Criterion::near(format!("closed-form integral (d={d})"), li.signed, exact, 1e-5 * scale));
        }
        integrals.push(li.signed);
        per_dim.push(entry);
    }
    let target0 = config::target(&cfg.target, cfg.dims[0])?;
    if gaussian_sd(&target0).is_some() && integrals.len() > 1 {
        let spread = integrals.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b)) - integrals.iter().fold(f64::INFINITY, |a, b| a.min(*b));
        criteria.push(Criterion::at_most("dimension-free integral", spread, 1e-9 * scale));
    }
    let results = json!({ "tau": tau, "time_points": times.len(), "dims": per_dim });
    Ok(Report { experiment: "regularity", table, results, criteria })
}

fn eigen_below_op(p: &RegularityProfile) -> bool {
    p.lambda_max.iter().zip(&p.op_norm).all(|(l, o)| *l <= *o * (1.0 + 1e-12) + 1e-12)
}

struct Cell {
    d: usize,
    n: usize,
    tau: f64,
    h_max: f64,
    w2: f64,
    ratio: f64,
}

fn converge_cell(mode: Mode, s: &Schedule, target: &TargetModel, sd: f64, d: usize, n: usize, rule: TauRule) -> Result<Cell, CliError> {
    let nf = n as f64;
    let (grid, normalizer, slopes, noise) = match mode {
        Mode::Ode => {
            let tau = match rule {
                TauRule::Paper => select_tau(s.family(), n, s.params().p)?.0,
                TauRule::Explicit(t) => t,
            };
            let grid = GeometricGrid::unit(tau, n)?;
            let slopes = grid.nodes[..n].iter().map(|&t| Ok(gaussian_velocity_slope(&s.eval(t)?, sd * sd))).collect::<Result<Vec<f64>, Error>>()?;
            (grid, (d as f64).sqrt() * nf.ln().powi(2) / nf, slopes, Vec::new())
        }
        Mode::Sde => {
            let (tau, horizon) = match rule {
                TauRule::Paper => select_tau(s.family(), n, s.params().p)?,
                TauRule::Explicit(t) => (t * nf.ln(), nf.ln()),
            };
            let grid = GeometricGrid::new(tau, horizon, n)?;
            let drift = ReverseOuDrift { target, horizon };
            let slopes = grid.nodes[..n].iter().map(|&t| drift.linear_slope(t).unwrap_or(f64::NAN)).collect();
            let noise = Diffusion::Constant(std::f64::consts::SQRT_2).increment_variances(&grid)?;
            (grid, (d as f64).sqrt() * nf.ln().powi(3) / nf, slopes, noise)
        }
    };
    let law = propagate_affine_law(&slopes, &grid, &GaussianLaw::standard(d), &noise);
    let w2 = w2_gaussian_isotropic(&law.mean, law.var.sqrt(), &vec![0.0; d], sd, d);
    if !w2.is_finite() {
        return Err(CliError::NumericalFailure(format!("non-finite W2 at d = {d}, N = {n}")));
    }
    Ok(Cell { d, n, tau: grid.tau, h_max: grid.h_max, w2, ratio: w2 / normalizer })
}

pub fn converge(cfg: &ExperimentConfig, scale: f64) -> Result<Report, CliError> {
    let s = config::family(&cfg.family)?;
    match cfg.mode {
        Mode::Ode if !s.family().is_flow() => return Err(CliError::config("ode mode needs a flow family; use --mode sde for diffusion")),
        Mode::Sde if s.family().is_flow() => return Err(CliError::config("sde mode needs the diffusion family")),
        _ => {}
    }
    let mut jobs = Vec::new();
    for &d in &cfg.dims {
        let target = config::target(&cfg.target, d)?;
        let sd = gaussian_sd(&target).ok_or_else(|| CliError::config("converge uses the exact-law pipeline and needs a centred Gaussian target"))?;
        for &n in &cfg.steps_list {
            jobs.push((target.clone(), sd, d, n));
        }
    }
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|(target, sd, d, n)| converge_cell(cfg.mode, &s, target, *sd, *d, *n, cfg.tau_rule))
        .collect::<Result<_, _>>()?;

    let mut table = Table::new(&["d", "N", "tau", "h_max", "w2", "bound_ratio"]);
    for c in &cells {
        table.push(vec![c.d.to_string(), c.n.to_string(), fmt_f64(c.tau), fmt_f64(c.h_max), fmt_f64(c.w2), fmt_f64(c.ratio)]);
    }
    let band = match cfg.mode {
        Mode::Ode => (-1.35, -0.75),
        Mode::Sde => (-1.35, -0.7),
    };
    let mut criteria = Vec::new();
    let mut per_dim = Vec::new();
    for &d in &cfg.dims {
        let mine: Vec<&Cell> = cells.iter().filter(|c| c.d == d).collect();
        let hi = mine.iter().map(|c| c.ratio).fold(f64::NEG_INFINITY, f64::max);
        let lo = mine.iter().map(|c| c.ratio).fold(f64::INFINITY, f64::min);
        criteria.push(Criterion::at_most(format!("normalized error spread (d={d})"), hi / lo, 3.0 * scale));
        let n_max = mine.iter().map(|c| c.n).max().unwrap_or(0);
        let top: Vec<&&Cell> = mine.iter().filter(|c| 10 * c.n >= n_max).collect();
        let slope = if top.len() >= 2 {
            let xs: Vec<f64> = top.iter().map(|c| (c.n as f64).ln()).collect();
            let ys: Vec<f64> = top.iter().map(|c| c.w2.ln()).collect();
            Some(least_squares(&xs, &ys)?.slope)
        } else {
            None
        };
        if let Some(slope) = slope {
            let (mid, half) = (0.5 * (band.0 + band.1), 0.5 * (band.1 - band.0));
            criteria.push(Criterion::near(format!("top-decade slope (d={d})"), slope, mid, half * scale));
        }
        per_dim.push(json!({ "d": d, "ratio_max": hi, "ratio_min": lo, "top_decade_slope": slope }));
    }
    let results = json!({ "mode": cfg.mode, "slope_band": [band.0, band.1], "dims": per_dim });
    Ok(Report { experiment: "converge", table, results, criteria })
}

pub fn transport(cfg: &ExperimentConfig, scale: f64) -> Result<Report, CliError> {
    let s = config::family(&cfg.family)?;
    let d = cfg.dims[0];
    let target = config::target(&cfg.target, d)?;
    let probes = config::probes(&cfg.probes, cfg.seed)?;
    let tau = tau_or(cfg, TRANSPORT_TAU);
    let n = *cfg.steps_list.iter().max().expect("checked non-empty");
    let grid = GeometricGrid::unit(tau, n)?;
    let p = profile(&target, &s, &grid.nodes, &probes)?;
    let cert = lipschitz_certificate(&p, 0.0)?;
    let x0s = TargetModel::centered_gaussian(d, 1.0)?.sample(cfg.starts, cfg.seed)?;
    let states = integrate_flows(&target, &s, &grid, &x0s)?;

    let mut table = Table::new(&["i", "x0_norm", "jac_norm", "trajectory_bound"]);
    let mut max_jac = 0.0f64;
    for (i, (x0, st)) in x0s.iter().zip(&states).enumerate() {
        let j = st.jac_norm();
        max_jac = max_jac.max(j);
        table.push(vec![i.to_string(), fmt_f64(flowreg::linalg::norm(x0)), fmt_f64(j), fmt_f64(st.log_cert.exp())]);
    }
    let slack = 1.0 + 10.0 * grid.h_max * scale;
    let mut criteria = vec![Criterion::at_most("certificate dominance", max_jac, cert * slack)];
    if let Some(sd) = gaussian_sd(&target) {
        criteria.push(Criterion::near("certificate tightness", cert, sd, 1e-2 * scale));
        criteria.push(Criterion::at_least("jacobian lower bound", max_jac, sd * (1.0 - 1e-2 * scale)));
    }
    let mut poincare = Map::new();
    let mut lsi = Map::new();
    // The audit transfers the certified constant of the discrete map, slack included.
    let audit = match poincare_audit(&target, cert * slack, &default_test_family()) {
        Ok(a) => Some(a),
        Err(Error::UnsupportedMethod(_)) => None,
        Err(e) => return Err(e.into()),
    };
    if let Some(a) = &audit {
        for e in &a.entries {
            poincare.insert(e.name.clone(), json!(e.ratio));
            lsi.insert(e.name.clone(), json!(e.lsi_ratio));
        }
        criteria.push(Criterion { name: "poincare".into(), passed: a.passed, value: Some(a.max_ratio), tolerance: Some(a.poincare_bound) });
        criteria.push(Criterion { name: "log-sobolev".into(), passed: a.lsi_passed, value: Some(a.max_lsi_ratio), tolerance: Some(a.lsi_bound) });
    }
    let es = flowreg::grids::early_stopping_bound(&target, &s, tau, d).ok();
    let pass = criteria.iter().all(|c| c.passed);
    let results = json!({
        "tau": tau,
        "steps": n,
        "h_max": grid.h_max,
        "certificate": cert,
        "max_jac_norm": max_jac,
        "poincare_ratios": if audit.is_some() { Value::Object(poincare) } else { Value::Null },
        "log_sobolev_ratios": if audit.is_some() { Value::Object(lsi) } else { Value::Null },
        "early_stopping_bound": es,
        "pass": pass,
    });
    Ok(Report { experiment: "transport", table, results, criteria })
}

/// `t = 1 - 2^-j` for `j = 3..=12`.
pub fn default_sphere_times() -> Vec<f64> {
    (3..=12).map(|j| 1.0 - 0.5f64.powi(j)).collect()
}

pub fn sphere(cfg: &ExperimentConfig, scale: f64) -> Result<Report, CliError> {
    let times = if cfg.t_grid.is_empty() { default_sphere_times() } else { cfg.t_grid.clone() };
    let mut table = Table::new(&["d", "t", "sigma2", "lambda_origin", "lambda_tan_r1", "lambda_rad_r1"]);
    let mut criteria = Vec::new();
    let mut per_dim = Vec::new();
    for &d in &cfg.dims {
        if d < 2 {
            return Err(CliError::config("sphere dimension must be at least 2"));
        }
        let (mut log_sigma, mut log_origin, mut log_rad) = (Vec::new(), Vec::new(), Vec::new());
        for &t in &times {
            let s2 = 1.0 - t * t;
            let origin = sphere_origin_jacobian(d, t);
            let pt = sphere_eigenvalues(d, t, 1.0)?;
            table.push(vec![d.to_string(), fmt_f64(t), fmt_f64(s2), fmt_f64(origin), fmt_f64(pt.lambda_tan), fmt_f64(pt.lambda_rad)]);
            log_sigma.push(0.5 * s2.ln());
            log_origin.push(origin.abs().ln());
            log_rad.push(pt.lambda_rad.abs().ln());
        }
        let so = least_squares(&log_sigma, &log_origin)?.slope;
        let sr = least_squares(&log_sigma, &log_rad)?.slope;
        criteria.push(Criterion::near(format!("origin blow-up slope (d={d})"), so, -4.0, 0.1 * scale));
        criteria.push(Criterion::near(format!("radial slope at r=1 (d={d})"), sr, -2.0, 0.1 * scale));
        per_dim.push(json!({ "d": d, "origin_slope": so, "radial_slope": sr }));
    }
    let a3 = bessel_ratio(3, 1.0)?;
    let coth = 1.0 / 1f64.tanh() - 1.0;
    criteria.push(Criterion::near("ratio closed form A_3(1)", a3, coth, 1e-10 * scale));
    let a10 = bessel_ratio(10, 1e3)?;
    criteria.push(Criterion::near("ratio asymptote A_10(1000)", a10, 1.0 - 9.0 / 2000.0, 5e-6 * scale));
    let results = json!({ "dims": per_dim, "a3_at_1": a3, "a10_at_1000": a10 });
    Ok(Report { experiment: "sphere", table, results, criteria })
}
