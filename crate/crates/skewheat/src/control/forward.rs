//! Controlled forward dynamics and Monte Carlo cost evaluation.
//!
//! The state follows the semi-implicit scheme of the uncontrolled oracle with
//! the generator re-frozen at each step's control value:
//!
//! ```text
//!     (I - dt L(u_k)) Y_{k+1} = Y_k + dt b(t_k, x, Y_k, u_k)
//!                                    + sigma(t_k, x, Y_k, u_k) dB_k,
//! ```
//!
//! so `u_k` governs the whole interval [t_k, t_{k+1}).  The implicit solve is
//! unconditionally stable and fixes constants exactly (the generator has zero
//! row sums), which keeps additive-noise runs on the mild trajectory.
//!
//! Cost evaluation streams the same sweep without storing the field: the time
//! integral is a left Riemann sum over steps, the space integral a
//! density-weighted trapezoid rule over the cost window.

use rayon::prelude::*;

use crate::discretization::{BrownianPaths, SemiImplicitFactor, SpaceTimeGrid};
use crate::error::{Error, Result};
use crate::linear::{check_bundle, check_snapshots, InitialCondition, StateField};
use crate::picard::CoefficientSpec;
use crate::stats;

use super::cost::{window_weights, CostSpec};
use super::law::{controlled_generator, ControlTrajectory, ControlledMaterialLaw};

/// Common validation for controlled sweeps; returns the sampled initial
/// profile and the per-step implicit factors.
fn prepare_sweep(
    law: &ControlledMaterialLaw,
    coeffs: &CoefficientSpec,
    u: &ControlTrajectory,
    ic: &InitialCondition,
    grid: &SpaceTimeGrid,
    paths: &BrownianPaths,
) -> Result<(Vec<f64>, Vec<SemiImplicitFactor>)> {
    if u.len() != grid.nt() {
        return Err(Error::Inconsistent(format!(
            "control trajectory has {} steps, grid has nt = {}",
            u.len(),
            grid.nt()
        )));
    }
    check_bundle(paths, grid)?;
    coeffs.check_hypotheses(
        grid.t_horizon(),
        (grid.node(0), grid.node(grid.nx() - 1)),
        (law.u_min(), law.u_max()),
        200,
    )?;
    let xi = ic.sample(grid)?;
    let mut factors = Vec::with_capacity(grid.nt());
    for k in 0..grid.nt() {
        let gen = controlled_generator(law, u.value(k), grid)?;
        factors.push(SemiImplicitFactor::new(&gen, grid.dt()));
    }
    Ok((xi.values().to_vec(), factors))
}

/// One path of the controlled sweep; `on_state(k, y)` sees the state at every
/// step `k = 0..=nt` in order.
fn sweep_path(
    factors: &[SemiImplicitFactor],
    coeffs: &CoefficientSpec,
    u: &ControlTrajectory,
    grid: &SpaceTimeGrid,
    paths: &BrownianPaths,
    p: usize,
    xi: &[f64],
    mut on_state: impl FnMut(usize, &[f64]),
) {
    let nx = grid.nx();
    let dt = grid.dt();
    let mut y = xi.to_vec();
    let mut rhs = vec![0.0; nx];
    on_state(0, &y);
    for (k, factor) in factors.iter().enumerate() {
        let t = k as f64 * dt;
        let uk = u.value(k);
        let db = paths.increment(p, k);
        for j in 0..nx {
            let x = grid.node(j);
            rhs[j] = y[j] + dt * coeffs.b(t, x, y[j], uk) + coeffs.sigma(t, x, y[j], uk) * db;
        }
        factor.solve_into(&rhs, &mut y);
        on_state(k + 1, &y);
    }
}

/// Solves the controlled dynamics for every path, storing the requested
/// snapshot steps.  Pass `0..=nt` as snapshots when the field will feed the
/// backward sweep.
pub fn solve_controlled(
    law: &ControlledMaterialLaw,
    coeffs: &CoefficientSpec,
    u: &ControlTrajectory,
    ic: &InitialCondition,
    grid: &SpaceTimeGrid,
    paths: &BrownianPaths,
    snapshot_steps: &[usize],
) -> Result<StateField> {
    check_snapshots(snapshot_steps, grid.nt())?;
    let (xi, factors) = prepare_sweep(law, coeffs, u, ic, grid, paths)?;
    let snaps = snapshot_steps.to_vec();
    let nx = grid.nx();

    let mut field = StateField::new_zeroed(grid, snaps.clone(), paths.first_path(), paths.n_paths());
    field.path_blocks_mut().enumerate().for_each(|(p, block)| {
        let mut si = 0;
        sweep_path(&factors, coeffs, u, grid, paths, p, &xi, |k, y| {
            if si < snaps.len() && snaps[si] == k {
                block[si * nx..(si + 1) * nx].copy_from_slice(y);
                si += 1;
            }
        });
    });
    Ok(field)
}

/// Monte Carlo cost of a control trajectory.
#[derive(Debug, Clone)]
pub struct CostEvaluation {
    /// Cross-path mean of the pathwise cost.
    pub mean: f64,
    /// Standard error of the mean.
    pub stderr: f64,
    /// Pathwise costs, in path order (for paired comparisons).
    pub per_path: Vec<f64>,
}

/// Evaluates the cost functional by streaming the controlled sweep; the field
/// is never stored.  Deterministic given the path bundle (common random
/// numbers make cost differences between controls directly comparable).
pub fn cost_eval(
    law: &ControlledMaterialLaw,
    coeffs: &CoefficientSpec,
    cost: &CostSpec,
    u: &ControlTrajectory,
    ic: &InitialCondition,
    grid: &SpaceTimeGrid,
    paths: &BrownianPaths,
) -> Result<CostEvaluation> {
    let (j_lo, j_hi) = cost.window_indices(grid)?;
    let weights = window_weights(grid, |x| law.rho_at(x), j_lo, j_hi)?;
    let (xi, factors) = prepare_sweep(law, coeffs, u, ic, grid, paths)?;
    let nt = grid.nt();
    let dt = grid.dt();

    let per_path: Vec<f64> = (0..paths.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut acc = 0.0;
            sweep_path(&factors, coeffs, u, grid, paths, p, &xi, |k, y| {
                if k < nt {
                    let t = k as f64 * dt;
                    let uk = u.value(k);
                    let mut slab = 0.0;
                    for (i, w) in weights.iter().enumerate() {
                        let j = j_lo + i;
                        slab += w * cost.f(t, grid.node(j), y[j], uk);
                    }
                    acc += dt * slab;
                } else {
                    for (i, w) in weights.iter().enumerate() {
                        acc += w * cost.g(y[j_lo + i]);
                    }
                }
            });
            acc
        })
        .collect();

    let (mean, stderr) = if per_path.len() < 2 {
        (per_path[0], 0.0)
    } else {
        let (m, v) = stats::mean_var(&per_path);
        (m, (v / per_path.len() as f64).sqrt())
    };
    Ok(CostEvaluation { mean, stderr, per_path })
}
