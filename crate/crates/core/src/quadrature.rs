//! Adaptive Gauss–Legendre quadrature.
//!
//! Each panel is integrated with a 10-point and a 20-point Gauss–Legendre rule;
//! their difference is the local error estimate. Panels that fail the local
//! test are bisected. The integrand may be vector valued, which lets the
//! posterior code integrate several moments against the same weight in one
//! pass.

use std::sync::OnceLock;

use crate::error::{Error, Result};

const LOW_ORDER: usize = 10;
const HIGH_ORDER: usize = 20;
const MAX_DEPTH: u32 = 48;
const MAX_PANELS: usize = 200_000;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Computes the `n`-point rule by Newton iteration on `P_n`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn rules() -> &'static (GaussLegendre, GaussLegendre) {
    static RULES: OnceLock<(GaussLegendre, GaussLegendre)> = OnceLock::new();
    RULES.get_or_init(|| (GaussLegendre::new(LOW_ORDER), GaussLegendre::new(HIGH_ORDER)))
}

/// Tolerances for [`integrate_vec`].
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
}

impl Tolerance {
    pub fn relative(rel: f64) -> Self {
        Self { rel, abs: 0.0 }
    }
}

fn panel<F>(f: &F, a: f64, b: f64, k: usize, rule: &GaussLegendre, out: &mut [f64], buf: &mut [f64])
where
    F: Fn(f64, &mut [f64]),
{
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    out[..k].iter_mut().for_each(|v| *v = 0.0);
    for (x, w) in rule.nodes.iter().zip(&rule.weights) {
        f(mid + half * x, buf);
        for j in 0..k {
            out[j] += w * buf[j];
        }
    }
    out[..k].iter_mut().for_each(|v| *v *= half);
}

/// Integrates the `k`-vector valued function `f` over `[a, b]`.
///
/// `f(x, out)` writes the integrand components into `out`. Convergence is
/// declared once the summed panel error estimate of every component is below
/// `rel·scale + abs`, where `scale` is the integral of the first component
/// (the normalising weight) times the largest absolute component ratio seen.
pub fn integrate_vec<F>(f: F, a: f64, b: f64, k: usize, tol: Tolerance) -> Result<Vec<f64>>
where
    F: Fn(f64, &mut [f64]),
{
    if a == b {
        return Ok(vec![0.0; k]);
    }
    let (lo_rule, hi_rule) = rules();
    let mut buf = vec![0.0; k];
    let mut lo = vec![0.0; k];
    let mut hi = vec![0.0; k];

    // work list of (a, b, depth, high-order estimate, error estimate)
    struct Panel {
        a: f64,
        b: f64,
        depth: u32,
        value: Vec<f64>,
        err: Vec<f64>,
    }
    let eval = |a: f64, b: f64, depth: u32, buf: &mut [f64], lo: &mut [f64], hi: &mut [f64]| {
        panel(&f, a, b, k, lo_rule, lo, buf);
        panel(&f, a, b, k, hi_rule, hi, buf);
        Panel {
            a,
            b,
            depth,
            value: hi.to_vec(),
            err: hi.iter().zip(lo.iter()).map(|(h, l)| (h - l).abs()).collect(),
        }
    };

    let mut panels = vec![eval(a, b, 0, &mut buf, &mut lo, &mut hi)];
    loop {
        let mut total = vec![0.0; k];
        let mut abs_total = vec![0.0; k];
        let mut err = vec![0.0; k];
        for p in &panels {
            for j in 0..k {
                total[j] += p.value[j];
                abs_total[j] += p.value[j].abs();
                err[j] += p.err[j];
            }
        }
        let budget: Vec<f64> = (0..k)
            .map(|j| tol.rel * abs_total[j].max(abs_total[0] * 1e-3) + tol.abs)
            .collect();
        let converged = (0..k).all(|j| err[j] <= budget[j]);
        if converged {
            return Ok(total);
        }
        if panels.len() > MAX_PANELS {
            let (worst, b) = (0..k)
                .map(|j| (err[j], budget[j]))
                .fold((0.0, 0.0), |acc, e| if e.0 - e.1 > acc.0 - acc.1 { e } else { acc });
            return Err(Error::QuadratureNoConvergence { error: worst, tolerance: b });
        }
        // split every panel whose error exceeds its share of the budget
        let width = b - a;
        let mut next = Vec::with_capacity(panels.len() * 2);
        let mut split_any = false;
        for p in panels {
            let share = (p.b - p.a).abs() / width.abs();
            let over = (0..k).any(|j| p.err[j] > budget[j] * share.max(1e-3) * 0.5);
            if over && p.depth < MAX_DEPTH {
                split_any = true;
                let m = 0.5 * (p.a + p.b);
                next.push(eval(p.a, m, p.depth + 1, &mut buf, &mut lo, &mut hi));
                next.push(eval(m, p.b, p.depth + 1, &mut buf, &mut lo, &mut hi));
            } else {
                next.push(p);
            }
        }
        panels = next;
        if !split_any {
            // every offending panel already sits at maximum depth; split the
            // worst remaining one if possible, otherwise give up
            let idx = panels
                .iter()
                .enumerate()
                .filter(|(_, p)| p.depth < MAX_DEPTH)
                .max_by(|x, y| {
                    let ex: f64 = x.1.err.iter().sum();
                    let ey: f64 = y.1.err.iter().sum();
                    ex.total_cmp(&ey)
                })
                .map(|(i, _)| i);
            match idx {
                Some(i) => {
                    let p = panels.swap_remove(i);
                    let m = 0.5 * (p.a + p.b);
                    panels.push(eval(p.a, m, p.depth + 1, &mut buf, &mut lo, &mut hi));
                    panels.push(eval(m, p.b, p.depth + 1, &mut buf, &mut lo, &mut hi));
                }
                None => {
                    let e: f64 = err.iter().cloned().fold(0.0, f64::max);
                    let b: f64 = budget.iter().cloned().fold(f64::INFINITY, f64::min);
                    return Err(Error::QuadratureNoConvergence { error: e, tolerance: b });
                }
            }
        }
    }
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let tol = Tolerance { rel: tol.rel, abs: tol.abs };
    integrate_vec(|x, out| out[0] = f(x), a, b, 1, tol).map(|v| v[0])
}

/// Integrates over consecutive breakpoints, summing the pieces. Breakpoints
/// outside `[a, b]` are ignored.
pub fn integrate_vec_split<F>(f: F, a: f64, b: f64, breaks: &[f64], k: usize, tol: Tolerance) -> Result<Vec<f64>>
where
    F: Fn(f64, &mut [f64]),
{
    let mut pts = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup();
    pts.extend(inner);
    pts.push(b);
    let mut total = vec![0.0; k];
    for w in pts.windows(2) {
        let part = integrate_vec(&f, w[0], w[1], k, tol)?;
        for j in 0..k {
            total[j] += part[j];
        }
    }
    Ok(total)
}
