//! Hamiltonian and the maximum-principle cost gradient.
//!
//! The control Hamiltonian density pairs the adjoint with the controlled
//! dynamics over the cost window:
//!
//! ```text
//!     H(t, u) = < p, A_u y + b >_rho + < q, sigma >_rho + integral of f,
//! ```
//!
//! and the cost gradient in u is its control partial.  With the diffusivity
//! entering through the generator, the gradient of the discrete cost at step
//! k reads
//!
//! ```text
//!     g(t_k) = E [ < p, (dL/du) y + b_u >_rho + < q, sigma_u >_rho ]
//!              + integral of f_u,
//! ```
//!
//! all evaluated at (t_k, Y(t_k), u_k), with p read off the regression form
//! of the adjoint at B_{t_k}.  Dynamics pairings use the plain
//! density-weighted window sum (dual to the indicator sources of the backward
//! sweep); the explicit f_u term uses the same trapezoid rule as the cost
//! itself, so that the gradient of the control-effort part is exact.

use rayon::prelude::*;

use crate::discretization::{BrownianPaths, SpaceTimeGrid};
use crate::error::{Error, Result};
use crate::linear::{check_bundle, StateField};
use crate::picard::CoefficientSpec;
use crate::stats;

use super::adjoint::AdjointField;
use super::cost::{window_weights, CostSpec};
use super::law::{controlled_generator, generator_u_derivative, ControlTrajectory, ControlledMaterialLaw};

/// Relative step for the control partials of the coefficients.
const FD_STEP: f64 = 1e-6;

/// Hamiltonian of one state/adjoint profile at time `t`, control `u`.
pub fn hamiltonian(
    law: &ControlledMaterialLaw,
    coeffs: &CoefficientSpec,
    cost: &CostSpec,
    grid: &SpaceTimeGrid,
    t: f64,
    u: f64,
    y: &[f64],
    p: &[f64],
    q: &[f64],
) -> Result<f64> {
    let nx = grid.nx();
    if y.len() != nx || p.len() != nx || q.len() != nx {
        return Err(Error::Inconsistent(format!(
            "profile lengths ({}, {}, {}) must match nx = {nx}",
            y.len(),
            p.len(),
            q.len()
        )));
    }
    let (j_lo, j_hi) = cost.window_indices(grid)?;
    let w_cost = window_weights(grid, |x| law.rho_at(x), j_lo, j_hi)?;
    let gen = controlled_generator(law, u, grid)?;
    let ly = gen.apply(y);
    let dx = grid.dx();
    let mut h = 0.0;
    for j in j_lo..=j_hi {
        let x = grid.node(j);
        let w = dx * law.rho_at(x);
        h += w * (p[j] * (ly[j] + coeffs.b(t, x, y[j], u)) + q[j] * coeffs.sigma(t, x, y[j], u));
    }
    for (i, w) in w_cost.iter().enumerate() {
        let x = grid.node(j_lo + i);
        h += w * cost.f(t, x, y[j_lo + i], u);
    }
    Ok(h)
}

/// Shared validation for gradient assembly.
fn check_gradient_inputs(
    u: &ControlTrajectory,
    y: &StateField,
    adj: &AdjointField,
    paths: &BrownianPaths,
) -> Result<()> {
    let grid = y.grid();
    if !y.has_all_steps() {
        return Err(Error::Inconsistent(
            "gradient assembly needs the state at every step".into(),
        ));
    }
    if u.len() != grid.nt() {
        return Err(Error::Inconsistent(format!(
            "control trajectory has {} steps, grid has nt = {}",
            u.len(),
            grid.nt()
        )));
    }
    check_bundle(paths, grid)?;
    if y.n_paths() != paths.n_paths() || y.first_path() != paths.first_path() {
        return Err(Error::Inconsistent(
            "state field and path bundle cover different paths".into(),
        ));
    }
    if adj.n_paths() != paths.n_paths() || adj.first_path() != paths.first_path() {
        return Err(Error::Inconsistent(
            "adjoint field and path bundle cover different paths".into(),
        ));
    }
    if adj.grid().nx() != grid.nx() || adj.grid().nt() != grid.nt() {
        return Err(Error::Inconsistent(
            "adjoint field and state field live on different grids".into(),
        ));
    }
    Ok(())
}

/// Per-path, per-step gradient integrand `[path * nt + k]`.
fn per_path_gradient(
    law: &ControlledMaterialLaw,
    coeffs: &CoefficientSpec,
    cost: &CostSpec,
    u: &ControlTrajectory,
    y: &StateField,
    adj: &AdjointField,
    paths: &BrownianPaths,
) -> Result<Vec<f64>> {
    check_gradient_inputs(u, y, adj, paths)?;
    let grid = *y.grid();
    let (nx, nt, dx) = (grid.nx(), grid.nt(), grid.dx());
    let (j_lo, j_hi) = cost.window_indices(&grid)?;
    let w_cost = window_weights(&grid, |x| law.rho_at(x), j_lo, j_hi)?;

    let mut dl_ops = Vec::with_capacity(nt);
    for k in 0..nt {
        dl_ops.push(generator_u_derivative(law, u.value(k), &grid)?);
    }

    let n = paths.n_paths();
    let mut g = vec![0.0; n * nt];
    g.par_chunks_mut(nt).enumerate().for_each_init(
        || vec![0.0; nx],
        |dl_y, (p, out)| {
            let mut b_path = 0.0;
            for (k, slot) in out.iter_mut().enumerate() {
                let t = k as f64 * grid.dt();
                let uk = u.value(k);
                let eu = FD_STEP * (1.0 + uk.abs());
                let y_k = y.slice(p, k);
                // The step update is implicit in the generator, so the exact
                // derivative of the step pairs the adjoint state and the
                // generator sensitivity with the state at the step's right
                // endpoint; coefficient sensitivities stay at the left
                // endpoint, matching the forward scheme.
                dl_ops[k].apply_into(y.slice(p, k + 1), dl_y);
                let b_next = b_path + paths.increment(p, k);
                let p_term = (k + 1 == nt).then(|| adj.p_terminal(p));
                let mut acc = 0.0;
                for j in j_lo..=j_hi {
                    let x = grid.node(j);
                    let yv = y_k[j];
                    let b_u =
                        (coeffs.b(t, x, yv, uk + eu) - coeffs.b(t, x, yv, uk - eu)) / (2.0 * eu);
                    let s_u = (coeffs.sigma(t, x, yv, uk + eu) - coeffs.sigma(t, x, yv, uk - eu))
                        / (2.0 * eu);
                    let w = dx * law.rho_at(x);
                    let p_hat = match p_term {
                        Some(terminal) => terminal[j],
                        None => adj.p_value(k + 1, j, b_next),
                    };
                    acc += w * (p_hat * (dl_y[j] + b_u) + adj.q(k, j) * s_u);
                }
                for (i, w) in w_cost.iter().enumerate() {
                    let j = j_lo + i;
                    acc += w * cost.f_u(t, grid.node(j), y_k[j], uk);
                }
                *slot = acc;
                b_path += paths.increment(p, k);
            }
        },
    );
    Ok(g)
}

/// Monte Carlo gradient of the cost in the control: `g[k] = dJ/du_k / dt`.
///
/// The returned values are the time-density of the gradient: the directional
/// derivative along `beta` is `sum_k g[k] beta[k] dt`.
pub fn smp_gradient(
    law: &ControlledMaterialLaw,
    coeffs: &CoefficientSpec,
    cost: &CostSpec,
    u: &ControlTrajectory,
    y: &StateField,
    adj: &AdjointField,
    paths: &BrownianPaths,
) -> Result<Vec<f64>> {
    let g = per_path_gradient(law, coeffs, cost, u, y, adj, paths)?;
    let nt = y.grid().nt();
    let n = y.n_paths();
    let mut mean = vec![0.0; nt];
    for p in 0..n {
        for (k, m) in mean.iter_mut().enumerate() {
            *m += g[p * nt + k];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    Ok(mean)
}

/// Directional derivative of the cost along `beta`, with its standard error:
/// the cross-path mean of `sum_k g_p[k] beta[k] dt`.
pub fn smp_directional(
    law: &ControlledMaterialLaw,
    coeffs: &CoefficientSpec,
    cost: &CostSpec,
    u: &ControlTrajectory,
    y: &StateField,
    adj: &AdjointField,
    paths: &BrownianPaths,
    beta: &[f64],
) -> Result<(f64, f64)> {
    let grid = y.grid();
    let nt = grid.nt();
    if beta.len() != nt {
        return Err(Error::Inconsistent(format!(
            "direction has {} steps, grid has nt = {nt}",
            beta.len()
        )));
    }
    let g = per_path_gradient(law, coeffs, cost, u, y, adj, paths)?;
    let dt = grid.dt();
    let n = y.n_paths();
    let per_path: Vec<f64> = (0..n)
        .map(|p| {
            beta.iter()
                .enumerate()
                .map(|(k, b)| g[p * nt + k] * b * dt)
                .sum()
        })
        .collect();
    if n < 2 {
        return Ok((per_path[0], 0.0));
    }
    let (m, v) = stats::mean_var(&per_path);
    Ok((m, (v / n as f64).sqrt()))
}
