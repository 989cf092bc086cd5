//! Acceptance suite A1–A11. Each test prints one `PASS`/`FAIL` line and
//! then asserts the same verdict. Tests take a shared lock so the runtime
//! budgets are measured without competing for cores.

use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use flowreg::driftfield::{gaussian_velocity_slope, velocity_jacobian, velocity_time_derivative, JacobianMethod, TimeDerivativeMethod};
use flowreg::fit::least_squares;
use flowreg::grids::{early_stopping_bound, euler_ode, propagate_affine_law, select_tau, Diffusion, Drift, GaussianLaw, LinearDrift, ReverseOuDrift};
use flowreg::metrics::{hungarian, w2_empirical_1d, w2_empirical_assignment, w2_gaussian_isotropic};
use flowreg::regularity::{default_time_grid, integral_lambda_max, profile, ProbeSpec};
use flowreg::sphere::{bessel_ratio, sphere_eigenvalues, sphere_origin_jacobian};
use flowreg::transport::{default_test_family, integrate_flows, lipschitz_certificate, poincare_audit, TestFunction};
use flowreg::{GeometricGrid, Schedule, TargetModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn verdict(id: &str, passed: bool, elapsed: Duration, budget: f64, detail: &str) {
    let secs = elapsed.as_secs_f64();
    let ok = passed && secs < budget;
    println!("{id} {} ({detail}; {secs:.2}s of {budget}s)", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{id} failed: {detail}; runtime {secs:.2}s (budget {budget}s)");
}

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn a1_dimension_free_integral() {
    let _g = lock();
    let start = Instant::now();
    let tau = 0.999;
    let times = default_time_grid(tau, 1000).unwrap();
    let mut worst_offset = 0.0f64;
    let mut worst_spread = 0.0f64;
    let mut notes = Vec::new();
    for (name, s) in [("lipman", Schedule::lipman_linear()), ("diffusion", Schedule::rescaled_diffusion())] {
        for sd in [0.5, 2.0, 4.0] {
            let mut vals = Vec::new();
            for d in [1, 2, 16, 64] {
                let target = TargetModel::centered_gaussian(d, sd).unwrap();
                let p = profile(&target, &s, &times, &ProbeSpec::TargetSamples { n: 2, seed: 1 }).unwrap();
                vals.push(integral_lambda_max(&p, 0.0).unwrap().signed);
            }
            let offset = (vals[0] - sd.ln()).abs();
            let spread = vals.iter().map(|v| (v - vals[0]).abs()).fold(0.0, f64::max);
            if offset > 2e-3 {
                notes.push(format!("{name} s={sd} offset {offset:.2e}"));
            }
            worst_offset = worst_offset.max(offset);
            worst_spread = worst_spread.max(spread);
        }
    }
    let detail = format!("max |∫λ̄ - log s| = {worst_offset:.3e}, max spread over d = {worst_spread:.1e} {notes:?}");
    verdict("A1", worst_offset <= 2e-3 && worst_spread <= 1e-9, start.elapsed(), 5.0, &detail);
}

/// Exact Bures error of the Euler iterates for a centred Gaussian target.
fn exact_law_errors(sde: bool, d: usize, ns: &[usize]) -> Vec<f64> {
    let sd = 2.0;
    let target = TargetModel::centered_gaussian(d, sd).unwrap();
    ns.iter()
        .map(|&n| {
            let (slopes, grid, noise) = if sde {
                let (tau, horizon) = select_tau(flowreg::Family::RescaledDiffusion, n, 1.0).unwrap();
                let grid = GeometricGrid::new(tau, horizon, n).unwrap();
                let drift = ReverseOuDrift { target: &target, horizon };
                let slopes: Vec<f64> = grid.nodes[..n].iter().map(|&t| drift.linear_slope(t).unwrap()).collect();
                let noise = Diffusion::Constant(2f64.sqrt()).increment_variances(&grid).unwrap();
                (slopes, grid, noise)
            } else {
                let s = Schedule::lipman_linear();
                let (tau, _) = select_tau(s.family(), n, 1.0).unwrap();
                let grid = GeometricGrid::unit(tau, n).unwrap();
                let slopes: Vec<f64> = grid.nodes[..n].iter().map(|&t| gaussian_velocity_slope(&s.eval(t).unwrap(), sd * sd)).collect();
                (slopes, grid, Vec::new())
            };
            let law = propagate_affine_law(&slopes, &grid, &GaussianLaw::standard(d), &noise);
            w2_gaussian_isotropic(&law.mean, law.var.sqrt(), &vec![0.0; d], sd, d)
        })
        .collect()
}

fn rate_checks(id: &str, sde: bool, band: (f64, f64), budget: f64) {
    let start = Instant::now();
    let ns: Vec<usize> = (3..=10).map(|k| 1 << k).collect();
    let (mut spread_ok, mut slope_ok) = (true, true);
    let mut notes = Vec::new();
    for d in [1, 4, 16] {
        let errs = exact_law_errors(sde, d, &ns);
        let ratios: Vec<f64> = ns
            .iter()
            .zip(&errs)
            .map(|(&n, e)| {
                let nf = n as f64;
                let l = nf.ln();
                e * nf / ((d as f64).sqrt() * if sde { l.powi(3) } else { l.powi(2) })
            })
            .collect();
        let spread = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max) / ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let top: Vec<usize> = (0..ns.len()).filter(|&i| 10 * ns[i] >= ns[ns.len() - 1]).collect();
        let xs: Vec<f64> = top.iter().map(|&i| (ns[i] as f64).ln()).collect();
        let ys: Vec<f64> = top.iter().map(|&i| errs[i].ln()).collect();
        let slope = least_squares(&xs, &ys).unwrap().slope;
        spread_ok &= spread < 3.0;
        slope_ok &= slope >= band.0 && slope <= band.1;
        notes.push(format!("d={d}: spread {spread:.3}, slope {slope:.3}"));
    }
    let elapsed = start.elapsed();
    println!("{id}(i) {} normalized-ratio spread < 3 [{}]", if spread_ok { "PASS" } else { "FAIL" }, notes.join("; "));
    println!("{id}(ii) {} top-decade slope in [{}, {}]", if slope_ok { "PASS" } else { "FAIL" }, band.0, band.1);
    verdict(id, spread_ok && slope_ok, elapsed, budget, &notes.join("; "));
}

#[test]
fn a2_ode_discretization_rate() {
    let _g = lock();
    rate_checks("A2", false, (-1.35, -0.75), 10.0);
}

#[test]
fn a3_sde_discretization_rate() {
    let _g = lock();
    rate_checks("A3", true, (-1.35, -0.7), 10.0);
}

fn three_schedules() -> Vec<Schedule> {
    vec![Schedule::lipman_linear(), Schedule::stochastic_interpolant(0.5, 1.0).unwrap(), Schedule::rescaled_diffusion()]
}

#[test]
fn a4_jacobian_identity() {
    let _g = lock();
    let start = Instant::now();
    let target = TargetModel::mixture_1d(vec![0.5, 0.5], vec![-1.0, 1.0], 0.25).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_cov, mut worst_fd) = (0.0f64, 0.0f64);
    for s in three_schedules() {
        for _ in 0..200 {
            let t: f64 = rng.random_range(0.01..0.99);
            let x = [rng.random_range(-3.0..3.0)];
            let sv = s.eval(t).unwrap();
            let a = velocity_jacobian(&target, &sv, &x, JacobianMethod::Analytic).unwrap()[(0, 0)];
            let c = velocity_jacobian(&target, &sv, &x, JacobianMethod::CovarianceIdentity).unwrap()[(0, 0)];
            let f = velocity_jacobian(&target, &sv, &x, JacobianMethod::FiniteDiff).unwrap()[(0, 0)];
            let scale = a.abs().max(1.0);
            worst_cov = worst_cov.max((a - c).abs() / scale);
            worst_fd = worst_fd.max((a - f).abs() / scale);
        }
    }
    let detail = format!("analytic vs covariance {worst_cov:.2e}, analytic vs differences {worst_fd:.2e}");
    verdict("A4", worst_cov <= 1e-8 && worst_fd <= 1e-5, start.elapsed(), 2.0, &detail);
}

#[test]
fn a5_time_derivative_decomposition() {
    let _g = lock();
    let start = Instant::now();
    let targets = [
        TargetModel::centered_gaussian(2, 2.0).unwrap(),
        TargetModel::mixture(vec![0.4, 0.6], vec![vec![-1.0, 0.0], vec![1.0, 0.5]], 0.25).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut all_ok = true;
    for target in &targets {
        for s in three_schedules() {
            for _ in 0..200 {
                let t: f64 = rng.random_range(0.01..0.99);
                let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                let a = velocity_time_derivative(target, &s, t, &x, TimeDerivativeMethod::Decomposition).unwrap();
                let b = velocity_time_derivative(target, &s, t, &x, TimeDerivativeMethod::FiniteDiff).unwrap();
                let err = (&a - &b).norm() / a.norm().max(b.norm()).max(1.0);
                worst = worst.max(err);
                all_ok &= rel_close(a.norm(), b.norm(), 1e-4) && err <= 1e-4;
            }
        }
    }
    verdict("A5", all_ok, start.elapsed(), 2.0, &format!("max relative gap {worst:.2e}"));
}

#[test]
fn a6_early_stopping_bound() {
    let _g = lock();
    let start = Instant::now();
    let d = 1;
    let mut dominated = true;
    let mut worst_ratio = 0.0f64;
    let mut worst_at = (String::new(), 0.0, 0.0);
    for (name, s) in [("lipman", Schedule::lipman_linear()), ("interpolant", Schedule::stochastic_interpolant(0.5, 1.0).unwrap())] {
        for sd in [0.5, 2.0] {
            let target = TargetModel::centered_gaussian(d, sd).unwrap();
            for i in 0..=100 {
                let tau = i as f64 / 100.0;
                let bound = early_stopping_bound(&target, &s, tau, d).unwrap();
                let (f, gbar) = (s.raw(tau).0, s.gbar(tau));
                let exact = (d as f64).sqrt() * ((f * f * sd * sd + gbar * gbar).sqrt() - sd).abs();
                dominated &= bound >= exact;
                if tau >= 0.5 && bound > 0.0 {
                    let ratio = bound / exact;
                    if ratio > worst_ratio {
                        worst_ratio = ratio;
                        worst_at = (name.to_string(), sd, tau);
                    }
                }
            }
        }
    }
    let detail = format!("dominates everywhere: {dominated}; max bound/exact on τ ≥ 0.5 = {worst_ratio:.3e} ({} s={} τ={})", worst_at.0, worst_at.1, worst_at.2);
    verdict("A6", dominated && worst_ratio <= 10.0, start.elapsed(), 1.0, &detail);
}

#[test]
fn a7_sphere() {
    let _g = lock();
    let start = Instant::now();
    let a10 = bessel_ratio(10, 1e3).unwrap();
    let gap = (a10 - (1.0 - 9.0 / 2000.0)).abs();
    let ok_i = gap <= 5e-6;
    let a3 = bessel_ratio(3, 1.0).unwrap();
    let ok_ii = (a3 - (1.0 / 1f64.tanh() - 1.0)).abs() <= 1e-10;
    let d = 8;
    let (mut ls, mut lo, mut lr) = (Vec::new(), Vec::new(), Vec::new());
    for j in 3..=12 {
        let t = 1.0 - 0.5f64.powi(j);
        ls.push(0.5 * (1.0 - t * t).ln());
        lo.push(sphere_origin_jacobian(d, t).abs().ln());
        lr.push(sphere_eigenvalues(d, t, 1.0).unwrap().lambda_rad.abs().ln());
    }
    let so = least_squares(&ls, &lo).unwrap().slope;
    let sr = least_squares(&ls, &lr).unwrap().slope;
    let ok_iii = (so + 4.0).abs() <= 0.1 && (sr + 2.0).abs() <= 0.1;
    let elapsed = start.elapsed();
    println!("A7(i) {} |A_10(1000) - (1 - 9/2000)| = {gap:.3e}", if ok_i { "PASS" } else { "FAIL" });
    println!("A7(ii) {} A_3(1) = {a3}", if ok_ii { "PASS" } else { "FAIL" });
    println!("A7(iii) {} origin slope {so:.4}, radial slope {sr:.4}", if ok_iii { "PASS" } else { "FAIL" });
    verdict("A7", ok_i && ok_ii && ok_iii, elapsed, 1.0, &format!("gap {gap:.2e}, slopes {so:.3} / {sr:.3}"));
}

#[test]
fn a8_flow_map_certificate() {
    let _g = lock();
    let start = Instant::now();
    let d = 2;
    let target = TargetModel::centered_gaussian(d, 2.0).unwrap();
    let s = Schedule::lipman_linear();
    let grid = GeometricGrid::unit(1.0 - 1e-4, 4096).unwrap();
    let p = profile(&target, &s, &grid.nodes, &ProbeSpec::TargetSamples { n: 2, seed: 8 }).unwrap();
    let cert = lipschitz_certificate(&p, 0.0).unwrap();
    let x0s = TargetModel::centered_gaussian(d, 1.0).unwrap().sample(100, 8).unwrap();
    let max_jac = integrate_flows(&target, &s, &grid, &x0s).unwrap().iter().map(|st| st.jac_norm()).fold(0.0, f64::max);
    let upper = cert * (1.0 + 10.0 * grid.h_max);
    let ok = max_jac >= 2.0 * (1.0 - 1e-2) && max_jac <= upper && (cert - 2.0).abs() <= 1e-2;
    verdict("A8", ok, start.elapsed(), 3.0, &format!("max ‖J‖ = {max_jac:.6}, certificate = {cert:.6}, upper = {upper:.6}"));
}

#[test]
fn a9_functional_inequalities() {
    let _g = lock();
    let start = Instant::now();
    let target = TargetModel::holder_half(1.0).unwrap();
    let s = Schedule::lipman_linear();
    let tau = 1.0 - 1e-4;
    let times = default_time_grid(tau, 400).unwrap();
    let p = profile(&target, &s, &times, &ProbeSpec::Axis1D { radius: 5.0, count: 101 }).unwrap();
    let cert = lipschitz_certificate(&p, 0.0).unwrap();
    let audit = poincare_audit(&target, cert, &default_test_family()).unwrap();
    let gauss = poincare_audit(&TargetModel::centered_gaussian(1, 2.0).unwrap(), 2.0, &[TestFunction::Identity]).unwrap();
    let tight = (gauss.entries[0].ratio - 4.0).abs() <= 1e-8;
    let detail = format!(
        "L = {cert:.5}, max Poincaré ratio {:.5} vs L² = {:.5}, Gaussian identity ratio {:.12}",
        audit.max_ratio, audit.poincare_bound, gauss.entries[0].ratio
    );
    let strict = audit.entries.iter().all(|e| e.ratio <= cert * cert);
    verdict("A9", strict && tight, start.elapsed(), 5.0, &detail);
}

fn brute_force_cost(cost: &[f64], n: usize) -> f64 {
    fn rec(cost: &[f64], n: usize, row: usize, used: &mut Vec<bool>) -> f64 {
        if row == n {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[row * n + j] + rec(cost, n, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    rec(cost, n, 0, &mut vec![false; n])
}

#[test]
fn a10_scheme_and_oracle_equivalences() {
    let _g = lock();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(10);

    let grid = GeometricGrid::unit(0.999, 256).unwrap();
    let drift = LinearDrift { dim: 3, slope: |t: f64| (2.0 * t - 1.0) / (1.0 - 0.5 * t) };
    let x0s: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let mut xs = x0s.clone();
    euler_ode(&drift, &grid, &mut xs).unwrap();
    let slopes: Vec<f64> = grid.nodes[..grid.n].iter().map(|&t| drift.linear_slope(t).unwrap()).collect();
    let mut ode_gap = 0.0f64;
    for (x0, x) in x0s.iter().zip(&xs) {
        let law = propagate_affine_law(&slopes, &grid, &GaussianLaw::new(x0.clone(), 0.0).unwrap(), &[]);
        for (a, b) in law.mean.iter().zip(x) {
            ode_gap = ode_gap.max((a - b).abs());
        }
    }

    let mut w2_gap = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..40);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..5.0)).collect();
        let q = w2_empirical_1d(&a, &b).unwrap();
        let wrap = |v: &[f64]| v.iter().map(|x| vec![*x]).collect::<Vec<_>>();
        let o = w2_empirical_assignment(&wrap(&a), &wrap(&b)).unwrap();
        w2_gap = w2_gap.max((q - o).abs());
    }

    let mut brute_gap = 0.0f64;
    for n in 1..=8 {
        for _ in 0..5 {
            let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..10.0)).collect();
            let perm = hungarian(&cost, n);
            let got: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
            brute_gap = brute_gap.max((got - brute_force_cost(&cost, n)).abs());
        }
    }
    let detail = format!("euler vs law {ode_gap:.1e}, quantile vs assignment {w2_gap:.1e}, assignment vs brute force {brute_gap:.1e}");
    verdict("A10", ode_gap <= 1e-12 && w2_gap <= 1e-12 && brute_gap <= 1e-12, start.elapsed(), 5.0, &detail);
}

fn run_cli(out: &Path, threads: usize, args: &[&str]) -> (i32, Vec<u8>, Vec<u8>) {
    let status = Command::new(env!("CARGO_BIN_EXE_flowreg"))
        .args(["--out", out.to_str().unwrap(), "--seed", "11", "--threads", &threads.to_string()])
        .args(args)
        .env_remove("FLOWREG_SEED")
        .output()
        .expect("run flowreg");
    let exp = args[0];
    let csv = std::fs::read(out.join(format!("{exp}.csv"))).unwrap();
    let json = std::fs::read(out.join(format!("{exp}.summary.json"))).unwrap();
    (status.status.code().unwrap_or(-1), csv, json)
}

#[test]
fn a11_determinism() {
    let _g = lock();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let commands: [&[&str]; 5] = [
        &["validate", "--family", "interpolant"],
        &["regularity", "--target", "mixture", "--dims", "1,2", "--probes", "samples:n=16", "--t-refine", "200"],
        &["converge", "--dims", "1,4", "--steps", "8..256"],
        &["transport", "--target", "mixture", "--steps", "256", "--starts", "20", "--probes", "axis:radius=4,count=41"],
        &["sphere", "--dim", "8"],
    ];
    let mut identical = true;
    let mut notes = Vec::new();
    for args in commands {
        let first = run_cli(dir.path(), 1, args);
        let again = run_cli(dir.path(), 1, args);
        let wide = run_cli(dir.path(), 8, args);
        let same = first == again && first == wide;
        identical &= same;
        notes.push(format!("{} exit {} {}", args[0], first.0, if same { "identical" } else { "DIFFERS" }));
    }
    verdict("A11", identical, start.elapsed(), f64::INFINITY, &notes.join(", "));
}
