//! Control-dependent material laws and admissible control trajectories.
//!
//! A controlled medium assigns each half-line a diffusivity that depends on a
//! scalar control value u drawn from a box [u_min, u_max]:
//!
//! ```text
//!     a(x, u) = a1(u) for x <= 0,    a(x, u) = a2(u) for x > 0,
//! ```
//!
//! with control-independent densities rho1, rho2.  The law carries the exact
//! derivatives a1'(u), a2'(u) so that sensitivity operators can be assembled
//! without numerical differentiation of the diffusivity itself.  A control
//! trajectory is piecewise constant in time: the value u_k governs the medium
//! on the whole interval [t_k, t_{k+1}).

use std::sync::Arc;

use crate::discretization::{DiscreteGenerator, SpaceTimeGrid};
use crate::error::{Error, Result};
use crate::kernel::CompositeMedium;

/// Scalar function of the control value.
pub type ControlFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Number of control samples used when validating a law or a cost functional.
const VALIDATION_SAMPLES: usize = 33;
/// Relative tolerance for the finite-difference derivative cross-check.
const DERIVATIVE_TOL: f64 = 1e-6;

/// Diffusivity law `a(x, u)` for a two-material medium under scalar control.
#[derive(Clone)]
pub struct ControlledMaterialLaw {
    a1: ControlFn,
    da1: ControlFn,
    a2: ControlFn,
    da2: ControlFn,
    rho1: f64,
    rho2: f64,
    u_min: f64,
    u_max: f64,
}

impl std::fmt::Debug for ControlledMaterialLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ControlledMaterialLaw")
            .field("rho1", &self.rho1)
            .field("rho2", &self.rho2)
            .field("u_min", &self.u_min)
            .field("u_max", &self.u_max)
            .finish_non_exhaustive()
    }
}

impl ControlledMaterialLaw {
    /// Builds a law from per-side diffusivity callables and their u-derivatives.
    ///
    /// Validation samples the control box and rejects laws whose diffusivities
    /// are not strictly positive and finite, or whose supplied derivatives
    /// disagree with a central finite difference beyond a small relative
    /// tolerance.
    pub fn new(
        a1: ControlFn,
        da1: ControlFn,
        a2: ControlFn,
        da2: ControlFn,
        rho1: f64,
        rho2: f64,
        u_min: f64,
        u_max: f64,
    ) -> Result<Self> {
        for (name, value) in [("rho1", rho1), ("rho2", rho2)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(name, format!("must be positive and finite, got {value}")));
            }
        }
        if !(u_min.is_finite() && u_max.is_finite() && u_min < u_max) {
            return Err(Error::invalid(
                "u_range",
                format!("control box must satisfy u_min < u_max with finite ends, got [{u_min}, {u_max}]"),
            ));
        }
        let law = Self { a1, da1, a2, da2, rho1, rho2, u_min, u_max };
        law.validate()?;
        Ok(law)
    }

    /// Reference two-material law: `a1(u) = u`, `a2(u) = 1 + u`, unit densities.
    ///
    /// Requires `u_min > 0` so the left diffusivity stays positive on the box.
    pub fn linear_in_u(u_min: f64, u_max: f64) -> Result<Self> {
        Self::new(
            Arc::new(|u| u),
            Arc::new(|_| 1.0),
            Arc::new(|u| 1.0 + u),
            Arc::new(|_| 1.0),
            1.0,
            1.0,
            u_min,
            u_max,
        )
    }

    /// Spot-checks positivity of both diffusivities and the consistency of the
    /// supplied derivatives against a central finite difference over the box.
    fn validate(&self) -> Result<()> {
        let span = self.u_max - self.u_min;
        for i in 0..VALIDATION_SAMPLES {
            let frac = i as f64 / (VALIDATION_SAMPLES - 1) as f64;
            let u = self.u_min + frac * span;
            for (name, a, da) in [("a1", &self.a1, &self.da1), ("a2", &self.a2, &self.da2)] {
                let value = a(u);
                if !(value.is_finite() && value > 0.0) {
                    return Err(Error::invalid(
                        "law",
                        format!("{name}({u}) = {value}; diffusivities must stay positive and finite on the control box"),
                    ));
                }
                // Step stays inside the box so positivity checks above cover it.
                let eps = (1e-6 * u.abs().max(1.0)).min(0.25 * span);
                let (lo, hi) = (u - eps, u + eps);
                let (lo, hi) = if lo < self.u_min {
                    (u, u + eps)
                } else if hi > self.u_max {
                    (u - eps, u)
                } else {
                    (lo, hi)
                };
                let fd = (a(hi) - a(lo)) / (hi - lo);
                let stated = da(0.5 * (lo + hi));
                let scale = stated.abs().max(fd.abs()).max(1.0);
                if (fd - stated).abs() > DERIVATIVE_TOL * scale {
                    return Err(Error::invalid(
                        "law",
                        format!("d{name}/du at u = {u} is {stated} but finite differences give {fd}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Diffusivity on the left half-line at control value `u`.
    pub fn a1(&self, u: f64) -> f64 {
        (self.a1)(u)
    }

    /// Diffusivity on the right half-line at control value `u`.
    pub fn a2(&self, u: f64) -> f64 {
        (self.a2)(u)
    }

    /// Derivative of the left diffusivity with respect to the control.
    pub fn da1(&self, u: f64) -> f64 {
        (self.da1)(u)
    }

    /// Derivative of the right diffusivity with respect to the control.
    pub fn da2(&self, u: f64) -> f64 {
        (self.da2)(u)
    }

    /// Density on the left half-line (control independent).
    pub fn rho1(&self) -> f64 {
        self.rho1
    }

    /// Density on the right half-line (control independent).
    pub fn rho2(&self) -> f64 {
        self.rho2
    }

    /// Density at position `x`; the interface node belongs to the left side.
    pub fn rho_at(&self, x: f64) -> f64 {
        if x <= 0.0 { self.rho1 } else { self.rho2 }
    }

    /// Lower end of the control box.
    pub fn u_min(&self) -> f64 {
        self.u_min
    }

    /// Upper end of the control box.
    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    /// Projects a scalar onto the control box.
    pub fn clamp(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }

    /// Whether `u` lies in the control box (closed, exact comparison).
    pub fn contains(&self, u: f64) -> bool {
        u.is_finite() && self.u_min <= u && u <= self.u_max
    }

    /// The frozen two-material medium at control value `u`.
    pub fn medium_at(&self, u: f64) -> Result<CompositeMedium> {
        if !self.contains(u) {
            return Err(Error::invalid(
                "u",
                format!("control value {u} outside box [{}, {}]", self.u_min, self.u_max),
            ));
        }
        CompositeMedium::new(self.a1(u), self.a2(u), self.rho1, self.rho2)
    }

    /// Largest diffusivity over the sampled control box; used for mesh-ratio checks.
    pub(crate) fn max_diffusivity(&self, controls: &[f64]) -> f64 {
        controls
            .iter()
            .fold(0.0f64, |m, &u| m.max(self.a1(u)).max(self.a2(u)))
    }
}

/// Finite-volume generator of the controlled medium frozen at control value `u`.
pub fn controlled_generator(
    law: &ControlledMaterialLaw,
    u: f64,
    grid: &SpaceTimeGrid,
) -> Result<DiscreteGenerator> {
    if !law.contains(u) {
        return Err(Error::invalid(
            "u",
            format!("control value {u} outside box [{}, {}]", law.u_min, law.u_max),
        ));
    }
    Ok(DiscreteGenerator::from_coefficients(law.a1(u), law.a2(u), law.rho1, law.rho2, grid))
}

/// Control derivative of the generator: the stencil assembled from a1'(u), a2'(u).
///
/// Assembly is linear in the per-side diffusivities, so replacing them by their
/// u-derivatives yields exactly dL/du.  The result is a valid tridiagonal
/// operator with zero row sums even when the derivatives are negative or zero.
pub fn generator_u_derivative(
    law: &ControlledMaterialLaw,
    u: f64,
    grid: &SpaceTimeGrid,
) -> Result<DiscreteGenerator> {
    if !law.contains(u) {
        return Err(Error::invalid(
            "u",
            format!("control value {u} outside box [{}, {}]", law.u_min, law.u_max),
        ));
    }
    Ok(DiscreteGenerator::from_coefficients(law.da1(u), law.da2(u), law.rho1, law.rho2, grid))
}

/// Piecewise-constant control trajectory: `values[k]` governs `[t_k, t_{k+1})`.
#[derive(Clone, Debug)]
pub struct ControlTrajectory {
    values: Vec<f64>,
    u_min: f64,
    u_max: f64,
}

impl ControlTrajectory {
    /// Wraps explicit values after checking admissibility against the law's box.
    pub fn from_values(law: &ControlledMaterialLaw, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("control", "trajectory must have at least one step"));
        }
        for (k, &u) in values.iter().enumerate() {
            if !law.contains(u) {
                return Err(Error::invalid(
                    "control",
                    format!("value {u} at step {k} outside box [{}, {}]", law.u_min(), law.u_max()),
                ));
            }
        }
        Ok(Self { values, u_min: law.u_min(), u_max: law.u_max() })
    }

    /// Constant trajectory `u` over `nt` steps.
    pub fn constant(law: &ControlledMaterialLaw, u: f64, nt: usize) -> Result<Self> {
        Self::from_values(law, vec![u; nt])
    }

    /// Projects arbitrary values onto the box; always admissible.
    pub fn projected(law: &ControlledMaterialLaw, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("control", "trajectory must have at least one step"));
        }
        let clamped = values.iter().map(|&u| law.clamp(u)).collect();
        Ok(Self { values: clamped, u_min: law.u_min(), u_max: law.u_max() })
    }

    /// Number of time steps the trajectory covers.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Whether the trajectory is empty (never true for a constructed value).
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Control value on `[t_k, t_{k+1})`.
    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    /// All control values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Lower end of the box the trajectory was validated against.
    pub fn u_min(&self) -> f64 {
        self.u_min
    }

    /// Upper end of the box the trajectory was validated against.
    pub fn u_max(&self) -> f64 {
        self.u_max
    }
}
