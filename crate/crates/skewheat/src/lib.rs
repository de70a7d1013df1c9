//! Stochastic heat flow in a two-material composite medium.
//!
//! The medium occupies the real line with piecewise-constant diffusivity and
//! density: `(a1, rho1)` on the left half-line and `(a2, rho2)` on the right.
//! Heat spreads under the divergence-form generator
//!
//! ```text
//!     A f(x) = 1/(2 rho(x)) * d/dx ( a(x) rho(x) * df/dx ),
//! ```
//!
//! whose transition kernel has a closed form: a rescaled Gaussian plus a
//! reflection term weighted by a transmission coefficient that measures the
//! impedance mismatch of the two materials. Everything in this crate builds
//! on that kernel:
//!
//! - [`kernel`] evaluates the kernel, its unit-mass integral, and the
//!   kernel-weighted smoothing of grid functions;
//! - [`discretization`] provides space-time grids, reproducible Brownian
//!   bundles, and the finite-volume generator matching the kernel;
//! - [`linear`] solves the additive-noise heat equation by explicit
//!   kernel convolution (mild form) and gives its exact moments;
//! - [`picard`] iterates the mild form for state-dependent coefficients and
//!   cross-checks against a time-stepping oracle;
//! - [`control`] treats the diffusivity pair as a control: forward/adjoint
//!   sweeps, a variational sensitivity equation, the stationarity gradient,
//!   and a projected-descent optimizer;
//! - [`verify`] bundles the kernel/discretization invariant checks consumed
//!   by the command-line tool.

pub mod control;
pub mod discretization;
pub mod error;
pub mod kernel;
pub mod linear;
pub mod picard;
mod quad;
pub(crate) mod stats;
pub mod verify;

pub use error::Error;
