//! Optimal control of the two-material diffusion.
//!
//! The control problem steers the per-side diffusivities through a scalar,
//! time-dependent control u(t) with values in a box, minimizing a running +
//! terminal cost of the stochastic state.  The pieces:
//!
//! * [`ControlledMaterialLaw`] — diffusivities a1(u), a2(u) with exact
//!   u-derivatives; [`ControlTrajectory`] — piecewise-constant admissible
//!   controls.
//! * [`CostSpec`] — running/terminal cost densities with validated partials.
//! * [`solve_controlled`] / [`cost_eval`] — forward dynamics under a control
//!   and the Monte Carlo cost.
//! * [`adjoint_solve`] — backward sweep estimating the adjoint pair (p, q) by
//!   cross-path regression on {1, B_t}.
//! * [`variation_solve`] — exact tangent of the forward scheme along a
//!   control direction.
//! * [`smp_gradient`] / [`smp_directional`] / [`hamiltonian`] — the
//!   maximum-principle gradient assembled from state and adjoint.
//! * [`optimize`] — projected gradient descent with Armijo backtracking under
//!   common random numbers.

mod adjoint;
mod cost;
mod forward;
mod gradient;
mod law;
mod optimize;
mod variation;

pub use adjoint::{adjoint_solve, AdjointField};
pub use cost::{CostSpec, RunningCostFn, TerminalCostFn};
pub use forward::{cost_eval, solve_controlled, CostEvaluation};
pub use gradient::{hamiltonian, smp_directional, smp_gradient};
pub use law::{
    controlled_generator, generator_u_derivative, ControlFn, ControlTrajectory,
    ControlledMaterialLaw,
};
pub use optimize::{optimize, DescentRecord, OptimizeConfig, OptimizeOutcome};
pub use variation::variation_solve;
