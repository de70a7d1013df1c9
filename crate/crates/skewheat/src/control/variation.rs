//! Control-to-state sensitivity along a direction.
//!
//! For a perturbation u + a*beta of the control trajectory, the variation
//! field Z = dY/da at a = 0 is the exact tangent of the semi-implicit forward
//! scheme: differentiating
//!
//! ```text
//!     (I - dt L(u_k)) Y_{k+1} = Y_k + dt b(t_k, x, Y_k, u_k)
//!                                    + sigma(t_k, x, Y_k, u_k) dB_k
//! ```
//!
//! in a gives, per path,
//!
//! ```text
//!     (I - dt L(u_k)) Z_{k+1} = Z_k + dt (b_y Z_k + b_u beta_k)
//!                                    + (sigma_y Z_k + sigma_u beta_k) dB_k
//!                                    + dt beta_k (dL/du)(u_k) Y_{k+1},
//! ```
//!
//! with Z_0 = 0.  The dL/du term carries the derivative of the implicit
//! factor and must act on the state at the step's right endpoint; feeding it
//! Y_k instead breaks the duality with the cost derivative at O(dt).
//! Coefficient partials are central finite differences.

use rayon::prelude::*;

use crate::discretization::{BrownianPaths, SemiImplicitFactor};
use crate::error::{Error, Result};
use crate::linear::{check_bundle, check_snapshots, StateField};
use crate::picard::CoefficientSpec;

use super::law::{controlled_generator, generator_u_derivative, ControlTrajectory, ControlledMaterialLaw};

/// Relative step for coefficient partials in the state and control arguments.
const FD_STEP: f64 = 1e-6;

/// Solves the tangent dynamics along `beta` for every path.  The state field
/// must store every step and come from `solve_controlled` on the same bundle
/// and control.
pub fn variation_solve(
    law: &ControlledMaterialLaw,
    coeffs: &CoefficientSpec,
    u: &ControlTrajectory,
    beta: &[f64],
    y: &StateField,
    paths: &BrownianPaths,
    snapshot_steps: &[usize],
) -> Result<StateField> {
    let grid = *y.grid();
    let (nx, nt, dt) = (grid.nx(), grid.nt(), grid.dt());
    if !y.has_all_steps() {
        return Err(Error::Inconsistent(
            "variation sweep needs the state at every step; solve with snapshots 0..=nt".into(),
        ));
    }
    if u.len() != nt {
        return Err(Error::Inconsistent(format!(
            "control trajectory has {} steps, grid has nt = {nt}",
            u.len()
        )));
    }
    if beta.len() != nt {
        return Err(Error::Inconsistent(format!(
            "direction has {} steps, grid has nt = {nt}",
            beta.len()
        )));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("beta", "direction must be finite"));
    }
    check_bundle(paths, &grid)?;
    check_snapshots(snapshot_steps, nt)?;
    if y.n_paths() != paths.n_paths() || y.first_path() != paths.first_path() {
        return Err(Error::Inconsistent(format!(
            "state field covers paths {}..{}, bundle covers {}..{}",
            y.first_path(),
            y.first_path() + y.n_paths(),
            paths.first_path(),
            paths.first_path() + paths.n_paths()
        )));
    }

    let mut factors = Vec::with_capacity(nt);
    let mut dl_ops = Vec::with_capacity(nt);
    for k in 0..nt {
        let gen = controlled_generator(law, u.value(k), &grid)?;
        factors.push(SemiImplicitFactor::new(&gen, dt));
        dl_ops.push(generator_u_derivative(law, u.value(k), &grid)?);
    }
    let snaps = snapshot_steps.to_vec();

    let mut field = StateField::new_zeroed(&grid, snaps.clone(), paths.first_path(), paths.n_paths());
    field.path_blocks_mut().enumerate().for_each(|(p, block)| {
        let mut z = vec![0.0; nx];
        let mut rhs = vec![0.0; nx];
        let mut dl_y = vec![0.0; nx];
        let mut si = 0;
        if snaps[si] == 0 {
            block[..nx].fill(0.0);
            si += 1;
        }
        for k in 0..nt {
            let t = k as f64 * dt;
            let uk = u.value(k);
            let bk = beta[k];
            let db = paths.increment(p, k);
            let y_k = y.slice(p, k);
            dl_ops[k].apply_into(y.slice(p, k + 1), &mut dl_y);
            for j in 0..nx {
                let x = grid.node(j);
                let yv = y_k[j];
                let ey = FD_STEP * (1.0 + yv.abs());
                let b_y = (coeffs.b(t, x, yv + ey, uk) - coeffs.b(t, x, yv - ey, uk)) / (2.0 * ey);
                let s_y =
                    (coeffs.sigma(t, x, yv + ey, uk) - coeffs.sigma(t, x, yv - ey, uk)) / (2.0 * ey);
                let eu = FD_STEP * (1.0 + uk.abs());
                let b_u = (coeffs.b(t, x, yv, uk + eu) - coeffs.b(t, x, yv, uk - eu)) / (2.0 * eu);
                let s_u =
                    (coeffs.sigma(t, x, yv, uk + eu) - coeffs.sigma(t, x, yv, uk - eu)) / (2.0 * eu);
                rhs[j] = z[j]
                    + dt * (b_y * z[j] + b_u * bk)
                    + (s_y * z[j] + s_u * bk) * db
                    + dt * bk * dl_y[j];
            }
            factors[k].solve_into(&rhs, &mut z);
            if si < snaps.len() && snaps[si] == k + 1 {
                block[si * nx..(si + 1) * nx].copy_from_slice(&z);
                si += 1;
            }
        }
    });
    Ok(field)
}
