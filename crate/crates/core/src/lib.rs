//! Closed-form flow-matching and diffusion drifts for tractable targets,
//! Euler-type samplers on geometric time grids, and the regularity,
//! discretization and transport diagnostics built on them.
//!
//! The model throughout is the reduced interpolation `X_t = f_t Y + ḡ_t ξ`
//! with `Y` drawn from a [`TargetModel`] and `ξ` standard Gaussian.
//!
//! ```
//! use flowreg::{driftfield, Schedule, TargetModel};
//!
//! let target = TargetModel::centered_gaussian(1, 2.0)?;
//! let sv = Schedule::lipman_linear().eval(0.5)?;
//! let v = driftfield::velocity(&target, &sv, &[1.0])?;
//! // v_t(x) = k_t x with k_t = (t s² - (1-t)) / (t² s² + (1-t)²)
//! assert!((v[0] - 1.2).abs() < 1e-12);
//! # Ok::<(), flowreg::Error>(())
//! ```

pub mod driftfield;
pub mod error;
pub mod fit;
pub mod grids;
pub mod linalg;
pub mod metrics;
pub mod quadrature;
pub mod regularity;
pub mod schedules;
pub mod sphere;
pub mod targets;
pub mod transport;

pub use error::{Error, Result};
pub use grids::{GaussianLaw, GeometricGrid};
pub use schedules::{Family, Schedule, ScheduleParams, ScheduleValues};
pub use targets::{Perturbation, PosteriorSummary, Quadrature1D, TargetModel};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/schedules.md")]
    mod schedules {}
    #[doc = include_str!("../../../book/src/targets.md")]
    mod targets {}
    #[doc = include_str!("../../../book/src/drifts.md")]
    mod drifts {}
    #[doc = include_str!("../../../book/src/sphere.md")]
    mod sphere {}
    #[doc = include_str!("../../../book/src/samplers.md")]
    mod samplers {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/regularity.md")]
    mod regularity {}
    #[doc = include_str!("../../../book/src/transport.md")]
    mod transport {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
