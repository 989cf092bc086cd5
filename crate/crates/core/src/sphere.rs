//! Uniform measure on the unit sphere `S^{d-1}` pushed along the rescaled
//! diffusion path (`f = t`, `ḡ² = σ² = 1 - t²`).
//!
//! The posterior of `Y` given `X_t = x` is von Mises–Fisher with mean
//! direction `x/r` and concentration `κ = f r / ḡ²`, so everything reduces to
//! the mean resultant length `A_d(κ) = I_{d/2}(κ) / I_{d/2-1}(κ)`.

use crate::error::{Error, Result};

/// Beyond this concentration [`bessel_ratio`] refuses to evaluate.
pub const KAPPA_MAX: f64 = 1e8;

const LENTZ_FLOOR: f64 = 1e-30;
const LENTZ_TOL: f64 = 1e-15;
const LENTZ_MAX_ITER: usize = 1_000_000;

/// `A_d(κ)` by the Gauss continued fraction
/// `I_ν/I_{ν-1} = 1/(2ν/κ + 1/(2(ν+1)/κ + …))`, `ν = d/2`,
/// evaluated with the modified Lentz algorithm.
///
/// ```
/// let a = flowreg::sphere::bessel_ratio(3, 1.0).unwrap();
/// assert!((a - (1.0 / 1f64.tanh() - 1.0)).abs() < 1e-12);
/// ```
pub fn bessel_ratio(d: usize, kappa: f64) -> Result<f64> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    if !(kappa >= 0.0) {
        return Err(Error::InvalidParameters(format!("concentration must be nonnegative, got {kappa}")));
    }
    if kappa > KAPPA_MAX {
        return Err(Error::Overflow(kappa));
    }
    if kappa == 0.0 {
        return Ok(0.0);
    }
    let nu = d as f64 / 2.0;
    let b = |k: usize| 2.0 * (nu + k as f64) / kappa;
    let mut f = b(0).max(LENTZ_FLOOR);
    let mut c = f;
    let mut dd = 0.0;
    for k in 1..LENTZ_MAX_ITER {
        dd = b(k) + dd;
        if dd.abs() < LENTZ_FLOOR {
            dd = LENTZ_FLOOR;
        }
        c = b(k) + 1.0 / c;
        if c.abs() < LENTZ_FLOOR {
            c = LENTZ_FLOOR;
        }
        dd = 1.0 / dd;
        let delta = c * dd;
        f *= delta;
        if (delta - 1.0).abs() < LENTZ_TOL {
            break;
        }
    }
    Ok(1.0 / f)
}

/// `A_d'(κ) = 1 - A² - (d-1)A/κ`, with `A'(0) = 1/d`.
pub fn bessel_ratio_derivative(d: usize, kappa: f64, a: f64) -> f64 {
    if kappa == 0.0 {
        1.0 / d as f64
    } else {
        1.0 - a * a - (d as f64 - 1.0) * a / kappa
    }
}

/// `(A, A')` including the large-κ branch, where the two-term asymptote
/// `A ≈ 1 - (d-1)/(2κ)` (error `O(κ⁻²)`) replaces the continued fraction.
pub fn ratio_and_derivative(d: usize, kappa: f64) -> Result<(f64, f64)> {
    if kappa > KAPPA_MAX {
        if d < 2 {
            return Err(Error::InvalidDimension(d));
        }
        let m = d as f64 - 1.0;
        return Ok((1.0 - m / (2.0 * kappa), m / (2.0 * kappa * kappa)));
    }
    let a = bessel_ratio(d, kappa)?;
    Ok((a, bessel_ratio_derivative(d, kappa, a)))
}

/// Drift eigen-structure at a point of radius `r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereDriftPoint {
    pub d: usize,
    pub t: f64,
    pub r: f64,
    pub kappa: f64,
    pub a: f64,
    pub a_prime: f64,
    /// eigenvalue on the `d-1` directions orthogonal to `x`
    pub lambda_tan: f64,
    /// eigenvalue along `x`
    pub lambda_rad: f64,
}

fn sigma2(t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::OutOfDomain { what: "sphere time outside (0,1)", t });
    }
    Ok(1.0 - t * t)
}

/// `λ_tan = (A/r - t)/σ²` and `λ_rad = ((t/σ²)A' - t)/σ²` with `κ = t r/σ²`.
pub fn sphere_eigenvalues(d: usize, t: f64, r: f64) -> Result<SphereDriftPoint> {
    let s2 = sigma2(t)?;
    if !(r > 0.0) {
        return Err(Error::OutOfDomain { what: "radius must be positive; use the origin Jacobian", t });
    }
    let kappa = t * r / s2;
    let (a, a_prime) = ratio_and_derivative(d, kappa)?;
    Ok(SphereDriftPoint {
        d,
        t,
        r,
        kappa,
        a,
        a_prime,
        lambda_tan: (a / r - t) / s2,
        lambda_rad: (t / s2 * a_prime - t) / s2,
    })
}

/// Coefficient of the identity in `∇v_t(0) = (t/(dσ⁴) - t/σ²)·Id`.
pub fn sphere_origin_jacobian(d: usize, t: f64) -> f64 {
    let s2 = 1.0 - t * t;
    t / (d as f64 * s2 * s2) - t / s2
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `I_ν/I_{ν-1}` from the power series, with the common prefactor removed.
    fn series_ratio(d: usize, kappa: f64) -> f64 {
        let nu = d as f64 / 2.0;
        let q = kappa * kappa / 4.0;
        let sum = |order: f64| {
            let mut term = 1.0;
            let mut s = 1.0;
            for k in 1..400 {
                term *= q / (k as f64 * (order + k as f64));
                s += term;
            }
            s
        };
        kappa / (2.0 * nu) * sum(nu) / sum(nu - 1.0)
    }

    #[test]
    fn matches_power_series() {
        for d in [2, 3, 8, 32] {
            for kappa in [1e-3, 1.0, 10.0, 100.0] {
                let cf = bessel_ratio(d, kappa).unwrap();
                let s = series_ratio(d, kappa);
                assert!(((cf - s) / s).abs() < 1e-10, "d={d} κ={kappa}: {cf} vs {s}");
            }
        }
    }

    #[test]
    fn closed_form_three_dimensions() {
        for kappa in [0.1f64, 1.0, 5.0, 40.0] {
            let exact = 1.0 / kappa.tanh() - 1.0 / kappa;
            assert!((bessel_ratio(3, kappa).unwrap() - exact).abs() < 1e-13);
        }
        let a = bessel_ratio(3, 1.0).unwrap();
        assert!((a - 0.313035).abs() < 1e-6);
    }

    #[test]
    fn asymptotes() {
        // reference value to 40 digits; the next term of the expansion is
        // +(d-1)(d-3)/(8κ²) ≈ 7.9e-6 here
        let a = bessel_ratio(10, 1e3).unwrap();
        assert!((a - 0.995_507_882_855_704_2).abs() < 1e-14, "{a:e}");
        let gap = a - (1.0 - 9.0 / 2e3);
        assert!((gap - 63.0 / 8e6).abs() < 2e-8);
        let a = bessel_ratio(10, 1e-3).unwrap();
        assert!((a - 1e-4).abs() <= 1e-7);
    }

    #[test]
    fn errors_and_origin() {
        assert!(matches!(bessel_ratio(1, 1.0), Err(Error::InvalidDimension(1))));
        assert!(matches!(bessel_ratio(4, 2e8), Err(Error::Overflow(_))));
        assert_eq!(bessel_ratio(4, 0.0).unwrap(), 0.0);
        assert_eq!(bessel_ratio_derivative(4, 0.0, 0.0), 0.25);
        let (a, _) = ratio_and_derivative(4, 2e8).unwrap();
        assert!((a - (1.0 - 1.5 / 2e8)).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        for d in [2, 3, 8, 32] {
            for kappa in [0.5, 1.0, 10.0, 100.0] {
                let a = bessel_ratio(d, kappa).unwrap();
                let ap = bessel_ratio_derivative(d, kappa, a);
                let h = 1e-4 * kappa;
                let fd = (bessel_ratio(d, kappa + h).unwrap() - bessel_ratio(d, kappa - h).unwrap()) / (2.0 * h);
                assert!((ap - fd).abs() < 1e-6, "d={d} κ={kappa}: {ap} vs {fd}");
            }
        }
    }

    #[test]
    fn ratio_is_increasing_and_bounded() {
        let mut prev = 0.0;
        for i in 1..2000 {
            let a = bessel_ratio(8, i as f64 * 0.05).unwrap();
            assert!(a > prev && a < 1.0);
            prev = a;
        }
    }

    #[test]
    fn origin_coefficient() {
        let c = sphere_origin_jacobian(4, 0.9);
        assert!((c - (0.9 / (4.0 * 0.0361) - 0.9 / 0.19)).abs() < 1e-12);
        assert!((c - 1.4958).abs() < 1e-4);
        assert!(sphere_origin_jacobian(4, 1e-9).abs() < 1e-8);
        let t: f64 = 1.0 - 1e-6;
        let s2 = 1.0 - t * t;
        let c = sphere_origin_jacobian(8, t);
        assert!((c * 8.0 * s2 * s2 / t - 1.0).abs() < 1e-4);
    }

    #[test]
    fn tube_regime() {
        let t: f64 = 0.999;
        let s2 = 1.0 - t * t;
        let p = sphere_eigenvalues(8, t, 1.0).unwrap();
        assert!((p.lambda_rad + 1.0 / s2).abs() <= 0.05 / s2);
        let c = p.lambda_tan.abs() * s2.sqrt();
        let q = sphere_eigenvalues(8, 0.9999, 1.0).unwrap();
        let c2 = q.lambda_tan.abs() * (1.0 - 0.9999f64 * 0.9999).sqrt();
        assert!(c < 1.0 && c2 < 1.0, "{c} {c2}");
    }

    #[test]
    fn small_time_is_finite() {
        let p = sphere_eigenvalues(8, 1e-6, 1.0).unwrap();
        assert!(p.lambda_tan.is_finite() && p.lambda_rad.is_finite());
        assert!(p.lambda_tan.abs() < 1e-5 && p.lambda_rad.abs() < 1e-5);
    }

    #[test]
    fn tangential_eigenvalue_decreases_in_radius() {
        for t in [0.3, 0.7, 0.95] {
            let lo = sphere_eigenvalues(8, t, 0.99).unwrap().lambda_tan;
            let mid = sphere_eigenvalues(8, t, 1.0).unwrap().lambda_tan;
            let hi = sphere_eigenvalues(8, t, 1.01).unwrap().lambda_tan;
            assert!(lo > mid && mid > hi);
        }
    }

    #[test]
    fn radius_zero_is_rejected() {
        assert!(matches!(sphere_eigenvalues(8, 0.5, 0.0), Err(Error::OutOfDomain { .. })));
    }
}
