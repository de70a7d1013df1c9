//! Projected gradient descent on the Monte Carlo cost.
//!
//! Each outer iteration assembles the maximum-principle gradient from a full
//! forward/backward sweep, then takes a projected step
//!
//! ```text
//!     u+ = clamp(u - eta g)
//! ```
//!
//! accepted under the Armijo condition
//!
//! ```text
//!     J(u+) <= J(u) - c < g, u - u+ >_dt,
//! ```
//!
//! with the step halved until acceptance.  All cost evaluations reuse one
//! fixed path bundle (common random numbers), so J is a deterministic
//! function of the control and the line search is meaningful at finite path
//! counts.  A projected step that moves nothing signals box-boundary
//! stationarity and counts as convergence, as does a gradient below `gtol`.

use crate::discretization::{BrownianPaths, SpaceTimeGrid};
use crate::error::{Error, Result};
use crate::linear::InitialCondition;
use crate::picard::CoefficientSpec;

use super::adjoint::adjoint_solve;
use super::cost::CostSpec;
use super::forward::{cost_eval, solve_controlled};
use super::gradient::smp_gradient;
use super::law::{ControlTrajectory, ControlledMaterialLaw};

/// Tuning knobs of the descent.
#[derive(Debug, Clone)]
pub struct OptimizeConfig {
    /// Initial (and maximal) step length.
    pub eta0: f64,
    /// Armijo acceptance fraction in (0, 1).
    pub armijo_c: f64,
    /// Convergence threshold on the sup norm of the gradient density.
    pub gtol: f64,
    /// Maximal number of outer iterations.
    pub max_outer: usize,
    /// Maximal number of step halvings per outer iteration.
    pub max_backtracks: usize,
    /// Restrict the search to constant-in-time controls: the descent then
    /// moves every step by the same scalar, driven by the total gradient.
    pub constant_control: bool,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            eta0: 0.1,
            armijo_c: 1e-4,
            gtol: 1e-4,
            max_outer: 100,
            max_backtracks: 30,
            constant_control: false,
        }
    }
}

impl OptimizeConfig {
    fn validate(&self) -> Result<()> {
        if !(self.eta0.is_finite() && self.eta0 > 0.0) {
            return Err(Error::invalid("eta0", format!("must be positive, got {}", self.eta0)));
        }
        if !(self.armijo_c.is_finite() && 0.0 < self.armijo_c && self.armijo_c < 1.0) {
            return Err(Error::invalid(
                "armijo_c",
                format!("must lie in (0, 1), got {}", self.armijo_c),
            ));
        }
        if !(self.gtol.is_finite() && self.gtol >= 0.0) {
            return Err(Error::invalid("gtol", format!("must be nonnegative, got {}", self.gtol)));
        }
        if self.max_outer < 1 {
            return Err(Error::invalid("max_outer", "need at least one iteration"));
        }
        if self.max_backtracks < 1 {
            return Err(Error::invalid("max_backtracks", "need at least one backtrack"));
        }
        Ok(())
    }
}

/// One row of the descent trace.
#[derive(Debug, Clone)]
pub struct DescentRecord {
    /// Outer iteration index.
    pub iter: usize,
    /// Monte Carlo cost of the iterate.
    pub j: f64,
    /// Standard error of the cost estimate.
    pub j_stderr: f64,
    /// Sup norm of the gradient density at the iterate.
    pub grad_inf_norm: f64,
    /// Step length in effect when the record was written.
    pub step: f64,
}

/// Final state of a descent run.
#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    /// The final control iterate.
    pub control: ControlTrajectory,
    /// Monte Carlo cost of the final iterate.
    pub cost: f64,
    /// Standard error of the final cost.
    pub cost_stderr: f64,
    /// Per-iteration records, in order.
    pub trace: Vec<DescentRecord>,
    /// Whether the run ended at a stationary point (small gradient or a
    /// fully blocked projected step).
    pub converged: bool,
    /// Whether the line search ran out of backtracks; the returned control
    /// is the best iterate found.
    pub line_search_failed: bool,
}

/// Runs the projected descent from `u0`.
#[allow(clippy::too_many_arguments)]
pub fn optimize(
    law: &ControlledMaterialLaw,
    coeffs: &CoefficientSpec,
    cost: &CostSpec,
    ic: &InitialCondition,
    grid: &SpaceTimeGrid,
    paths: &BrownianPaths,
    u0: &ControlTrajectory,
    cfg: &OptimizeConfig,
) -> Result<OptimizeOutcome> {
    cfg.validate()?;
    let nt = grid.nt();
    if u0.len() != nt {
        return Err(Error::Inconsistent(format!(
            "initial control has {} steps, grid has nt = {nt}",
            u0.len()
        )));
    }
    for &v in u0.values() {
        if !law.contains(v) {
            return Err(Error::Inconsistent(format!(
                "initial control value {v} outside the law's box [{}, {}]",
                law.u_min(),
                law.u_max()
            )));
        }
    }
    let all_steps: Vec<usize> = (0..=nt).collect();
    let dt = grid.dt();

    let mut u = u0.clone();
    let mut eval = cost_eval(law, coeffs, cost, &u, ic, grid, paths)?;
    let mut trace: Vec<DescentRecord> = Vec::new();
    let mut converged = false;
    let mut line_search_failed = false;
    let mut eta = cfg.eta0;

    let gradient_at = |u: &ControlTrajectory| -> Result<Vec<f64>> {
        let y = solve_controlled(law, coeffs, u, ic, grid, paths, &all_steps)?;
        let adj = adjoint_solve(law, coeffs, cost, u, &y, paths)?;
        let mut g = smp_gradient(law, coeffs, cost, u, &y, &adj, paths)?;
        if cfg.constant_control {
            // One scalar degree of freedom: the descent direction is the
            // uniform shift and its gradient is the dt-weighted total.
            let gbar: f64 = g.iter().sum::<f64>() * dt;
            g.iter_mut().for_each(|v| *v = gbar);
        }
        Ok(g)
    };

    for iter in 0..cfg.max_outer {
        let g = gradient_at(&u)?;
        let gnorm = g.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        trace.push(DescentRecord {
            iter,
            j: eval.mean,
            j_stderr: eval.stderr,
            grad_inf_norm: gnorm,
            step: eta,
        });
        if gnorm <= cfg.gtol {
            converged = true;
            break;
        }

        let mut accepted = false;
        let mut stationary = false;
        for _ in 0..=cfg.max_backtracks {
            let trial_vals: Vec<f64> =
                (0..nt).map(|k| law.clamp(u.value(k) - eta * g[k])).collect();
            let decrease_ref: f64 = (0..nt)
                .map(|k| g[k] * (u.value(k) - trial_vals[k]))
                .sum::<f64>()
                * dt;
            if decrease_ref <= 1e-14 * (1.0 + eval.mean.abs()) {
                // The projection blocks the whole step: box-stationary.
                stationary = true;
                break;
            }
            let trial = ControlTrajectory::projected(law, &trial_vals)?;
            let trial_eval = cost_eval(law, coeffs, cost, &trial, ic, grid, paths)?;
            if trial_eval.mean <= eval.mean - cfg.armijo_c * decrease_ref {
                u = trial;
                eval = trial_eval;
                accepted = true;
                eta = (2.0 * eta).min(cfg.eta0);
                break;
            }
            eta *= 0.5;
        }
        if stationary {
            converged = true;
            break;
        }
        if !accepted {
            line_search_failed = true;
            break;
        }
    }

    if !converged && !line_search_failed && trace.len() == cfg.max_outer {
        // Budget exhausted right after an accepted step: document the final
        // iterate with a fresh gradient so the trace ends at the returned u.
        let g = gradient_at(&u)?;
        let gnorm = g.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        trace.push(DescentRecord {
            iter: cfg.max_outer,
            j: eval.mean,
            j_stderr: eval.stderr,
            grad_inf_norm: gnorm,
            step: 0.0,
        });
        converged = gnorm <= cfg.gtol;
    }

    Ok(OptimizeOutcome {
        control: u,
        cost: eval.mean,
        cost_stderr: eval.stderr,
        trace,
        converged,
        line_search_failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::sample_paths;

    fn effort_only_setup(
        n_paths: usize,
    ) -> (ControlledMaterialLaw, SpaceTimeGrid, BrownianPaths, CoefficientSpec, CostSpec, InitialCondition)
    {
        // Zero initial data keeps the state x-constant on every path, so the
        // state cost is control-independent and J is minimized by driving the
        // control effort to the box floor.
        let law = ControlledMaterialLaw::linear_in_u(0.1, 2.0).expect("valid law");
        let grid = SpaceTimeGrid::new(-2.0, 2.0, 21, 0.5, 50).expect("valid grid");
        let paths = sample_paths(31, &grid, n_paths).expect("paths");
        let coeffs = CoefficientSpec::additive(0.4);
        let cost = CostSpec::temperature_control(0.3, 0.6, (-1.0, 1.0)).expect("preset");
        (law, grid, paths, coeffs, cost, InitialCondition::zero())
    }

    #[test]
    fn effort_only_cost_descends_to_the_box_floor() {
        let (law, grid, paths, coeffs, cost, ic) = effort_only_setup(64);
        let u0 = ControlTrajectory::constant(&law, 1.0, grid.nt()).expect("start");
        let out = optimize(&law, &coeffs, &cost, &ic, &grid, &paths, &u0, &OptimizeConfig::default())
            .expect("descent");

        println!(
            "descent: {} iterations, converged = {}, final J = {:.6}",
            out.trace.len(),
            out.converged,
            out.cost
        );
        assert!(out.converged, "boundary stationarity must count as convergence");
        assert!(!out.line_search_failed);
        for &v in out.control.values() {
            assert!(
                (v - law.u_min()).abs() < 1e-9,
                "effort-only cost must drive the control to u_min, got {v}"
            );
        }
        for pair in out.trace.windows(2) {
            assert!(
                pair[1].j <= pair[0].j + 1e-12,
                "Armijo steps must never increase the cost: {} -> {}",
                pair[0].j,
                pair[1].j
            );
        }
    }

    #[test]
    fn loose_gradient_tolerance_accepts_the_start_point() {
        let (law, grid, paths, coeffs, cost, ic) = effort_only_setup(32);
        let u0 = ControlTrajectory::constant(&law, 0.1, grid.nt()).expect("start at the floor");
        // Flat-state gradient is 4 theta u = 0.12 at the floor; a looser gtol
        // must accept immediately without touching the control.
        let cfg = OptimizeConfig { gtol: 0.2, ..OptimizeConfig::default() };
        let out = optimize(&law, &coeffs, &cost, &ic, &grid, &paths, &u0, &cfg).expect("descent");
        assert!(out.converged);
        assert_eq!(out.trace.len(), 1, "one record: the start point already passes");
        assert_eq!(out.control.values(), u0.values());
    }

    #[test]
    fn constant_mode_keeps_the_trajectory_uniform() {
        let (law, grid, paths, coeffs, cost, ic) = effort_only_setup(32);
        let u0 = ControlTrajectory::constant(&law, 0.9, grid.nt()).expect("start");
        let cfg = OptimizeConfig { constant_control: true, ..OptimizeConfig::default() };
        let out = optimize(&law, &coeffs, &cost, &ic, &grid, &paths, &u0, &cfg).expect("descent");
        for step in out.trace.iter() {
            assert!(step.grad_inf_norm.is_finite());
        }
        let first = out.control.value(0);
        for &v in out.control.values() {
            assert_eq!(v, first, "constant mode must keep the control uniform");
        }
        assert!(out.converged);
        assert!((first - law.u_min()).abs() < 1e-9, "floor is optimal, got {first}");
    }

    #[test]
    fn config_validation_rejects_bad_knobs() {
        let (law, grid, paths, coeffs, cost, ic) = effort_only_setup(8);
        let u0 = ControlTrajectory::constant(&law, 0.5, grid.nt()).expect("start");
        for cfg in [
            OptimizeConfig { eta0: 0.0, ..OptimizeConfig::default() },
            OptimizeConfig { armijo_c: 1.0, ..OptimizeConfig::default() },
            OptimizeConfig { max_outer: 0, ..OptimizeConfig::default() },
        ] {
            let err = optimize(&law, &coeffs, &cost, &ic, &grid, &paths, &u0, &cfg).unwrap_err();
            println!("rejected: {err}");
        }
    }
}
