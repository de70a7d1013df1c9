//! Backward adjoint sweep with cross-path regression.
//!
//! The adjoint pair (p, q) of the control problem solves, backward in time,
//!
//! ```text
//!     -dp = [ A_u* p + p b_y + q sigma_y + f_y ] dt - q dB,    p(T) = g_y(Y(T)),
//! ```
//!
//! where `A_u*` is the density-weighted adjoint of the controlled generator.
//! The discrete sweep forms, for each path, the explicit bracket
//!
//! ```text
//!     v = p_{k+1} + dt ( L*(u_k) p_{k+1} + p_{k+1} b_y + q_{k+1} sigma_y + f_y ),
//! ```
//!
//! with state arguments at t_{k+1} and interval control u_k, and estimates the
//! conditional expectation p(t_k) = E[v | B_{t_k}] by ordinary least squares
//! across paths on the basis {1, B_{t_k}}.  The martingale density is
//! estimated before the regression as q(t_k) = Cov(p(t_{k+1}), dB_k) / dt,
//! which targets q at t_{k+1} (one step late, the price of an explicit
//! estimator).  Running-cost sources act through the window indicator; the
//! terminal condition is masked the same way.
//!
//! The explicit bracket is a forward Euler step of a backward heat equation,
//! so it is only stable under the parabolic mesh condition
//! `dt * max(a) <= dx^2`, which is validated at entry.

use rayon::prelude::*;

use crate::discretization::{BrownianPaths, SpaceTimeGrid};
use crate::error::{Error, Result};
use crate::linear::{check_bundle, StateField};
use crate::picard::CoefficientSpec;

use super::cost::CostSpec;
use super::law::{controlled_generator, ControlTrajectory, ControlledMaterialLaw};

/// Relative step for the central finite differences of b_y and sigma_y.
const STATE_FD_STEP: f64 = 1e-6;
/// Regression fallback threshold: centred regressor mass `sxx` below this
/// multiple of the path count means B_t carries no usable signal (always the
/// case at k = 0 where B = 0).
const SXX_FLOOR: f64 = 1e-12;

/// Regression form of the adjoint field.
///
/// For every step `k < nt` the sweep stores the OLS coefficients of
/// `p(t_k) ~ beta0 + beta1 B_{t_k}`, the martingale density estimate
/// `q(t_k)`, and their standard errors; terminal values are kept per path.
#[derive(Debug, Clone)]
pub struct AdjointField {
    grid: SpaceTimeGrid,
    n_paths: usize,
    first_path: usize,
    beta0: Vec<f64>,
    beta1: Vec<f64>,
    q: Vec<f64>,
    se_beta0: Vec<f64>,
    se_beta1: Vec<f64>,
    se_q: Vec<f64>,
    p_terminal: Vec<f64>,
    fallback_steps: Vec<usize>,
}

impl AdjointField {
    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// Global index of the first path of the bundle the field was fit on.
    pub fn first_path(&self) -> usize {
        self.first_path
    }

    fn at(&self, k: usize, j: usize) -> usize {
        debug_assert!(k < self.grid.nt() && j < self.grid.nx());
        k * self.grid.nx() + j
    }

    /// Intercept of the regression at step `k`, node `j`.
    pub fn beta0(&self, k: usize, j: usize) -> f64 {
        self.beta0[self.at(k, j)]
    }

    /// Slope of the regression at step `k`, node `j`.
    pub fn beta1(&self, k: usize, j: usize) -> f64 {
        self.beta1[self.at(k, j)]
    }

    /// Martingale density estimate at step `k`, node `j` (targets t_{k+1}).
    pub fn q(&self, k: usize, j: usize) -> f64 {
        self.q[self.at(k, j)]
    }

    /// OLS standard error of `beta0`.
    pub fn se_beta0(&self, k: usize, j: usize) -> f64 {
        self.se_beta0[self.at(k, j)]
    }

    /// OLS standard error of `beta1`.
    pub fn se_beta1(&self, k: usize, j: usize) -> f64 {
        self.se_beta1[self.at(k, j)]
    }

    /// Standard error of the covariance estimator behind `q`.
    pub fn se_q(&self, k: usize, j: usize) -> f64 {
        self.se_q[self.at(k, j)]
    }

    /// Adjoint value at step `k`, node `j`, for a path whose Brownian value
    /// at `t_k` is `b`.
    pub fn p_value(&self, k: usize, j: usize, b: f64) -> f64 {
        let i = self.at(k, j);
        self.beta0[i] + self.beta1[i] * b
    }

    /// Terminal adjoint of path `p`: `g_y(Y(T))` on the cost window, exactly.
    pub fn p_terminal(&self, p: usize) -> &[f64] {
        let nx = self.grid.nx();
        &self.p_terminal[p * nx..(p + 1) * nx]
    }

    /// Steps where the regression fell back to the plain cross-path mean
    /// (degenerate regressor).  Always contains step 0.
    pub fn fallback_steps(&self) -> &[usize] {
        &self.fallback_steps
    }
}

/// Runs the backward sweep.  The state field must store every step of the
/// bundle that produced it (`solve_controlled` with snapshots `0..=nt`).
pub fn adjoint_solve(
    law: &ControlledMaterialLaw,
    coeffs: &CoefficientSpec,
    cost: &CostSpec,
    u: &ControlTrajectory,
    y: &StateField,
    paths: &BrownianPaths,
) -> Result<AdjointField> {
    let grid = *y.grid();
    let (nx, nt, dt) = (grid.nx(), grid.nt(), grid.dt());
    if !y.has_all_steps() {
        return Err(Error::Inconsistent(
            "adjoint sweep needs the state at every step; solve with snapshots 0..=nt".into(),
        ));
    }
    if u.len() != nt {
        return Err(Error::Inconsistent(format!(
            "control trajectory has {} steps, grid has nt = {nt}",
            u.len()
        )));
    }
    check_bundle(paths, &grid)?;
    if y.n_paths() != paths.n_paths() || y.first_path() != paths.first_path() {
        return Err(Error::Inconsistent(format!(
            "state field covers paths {}..{}, bundle covers {}..{}",
            y.first_path(),
            y.first_path() + y.n_paths(),
            paths.first_path(),
            paths.first_path() + paths.n_paths()
        )));
    }
    let n = paths.n_paths();
    if n < 4 {
        return Err(Error::invalid(
            "paths",
            format!("cross-path regression needs at least 4 paths, got {n}"),
        ));
    }
    let ratio = dt * law.max_diffusivity(u.values()) / (grid.dx() * grid.dx());
    if ratio > 1.0 + 1e-12 {
        return Err(Error::invalid(
            "grid",
            format!(
                "explicit backward sweep is unstable: dt * max(a) / dx^2 = {ratio:.3} > 1; \
                 refine the time grid or coarsen the space grid"
            ),
        ));
    }
    let (j_lo, j_hi) = cost.window_indices(&grid)?;

    // Terminal condition, masked by the window indicator.
    let mut p_cur = vec![0.0; n * nx];
    p_cur.par_chunks_mut(nx).enumerate().for_each(|(p, row)| {
        let y_t = y.slice(p, nt);
        for j in j_lo..=j_hi {
            row[j] = cost.g_y(y_t[j]);
        }
    });
    let p_terminal = p_cur.clone();

    // Brownian value per path, rolled backward from B(T).
    let mut b_cur: Vec<f64> = (0..n).map(|p| paths.path(p).iter().sum()).collect();

    let mut beta0 = vec![0.0; nt * nx];
    let mut beta1 = vec![0.0; nt * nx];
    let mut q = vec![0.0; nt * nx];
    let mut se_beta0 = vec![0.0; nt * nx];
    let mut se_beta1 = vec![0.0; nt * nx];
    let mut se_q = vec![0.0; nt * nx];
    let mut fallback_steps = Vec::new();
    let mut q_next = vec![0.0; nx];
    let inv_n = 1.0 / n as f64;

    for k in (0..nt).rev() {
        let uk = u.value(k);
        let t_next = (k + 1) as f64 * dt;
        let gen = controlled_generator(law, uk, &grid)?;
        let row_base = k * nx;

        // Martingale density from the pre-update adjoint: q(t_k) estimates
        // q at t_{k+1} since p_cur still holds p(t_{k+1}).
        {
            let mut db_mean = 0.0;
            for p in 0..n {
                db_mean += paths.increment(p, k);
            }
            db_mean *= inv_n;
            let mut p_mean = vec![0.0; nx];
            for p in 0..n {
                let row = &p_cur[p * nx..(p + 1) * nx];
                for j in 0..nx {
                    p_mean[j] += row[j];
                }
            }
            p_mean.iter_mut().for_each(|m| *m *= inv_n);
            let mut cov = vec![0.0; nx];
            let mut cov_sq = vec![0.0; nx];
            for p in 0..n {
                let dbc = paths.increment(p, k) - db_mean;
                let row = &p_cur[p * nx..(p + 1) * nx];
                for j in 0..nx {
                    let prod = (row[j] - p_mean[j]) * dbc;
                    cov[j] += prod;
                    cov_sq[j] += prod * prod;
                }
            }
            for j in 0..nx {
                let c = cov[j] / (n - 1) as f64;
                q[row_base + j] = c / dt;
                // stderr of the mean of the centred products, scaled by 1/dt
                let var_prod = (cov_sq[j] - cov[j] * cov[j] * inv_n) / (n - 1) as f64;
                se_q[row_base + j] = (var_prod.max(0.0) * inv_n).sqrt() / dt;
            }
        }

        // Explicit bracket, overwriting the adjoint in place.
        p_cur.par_chunks_mut(nx).enumerate().for_each_init(
            || vec![0.0; nx],
            |adj, (p, row)| {
                gen.adjoint_apply_into(row, adj);
                let y_next = y.slice(p, k + 1);
                for j in 0..nx {
                    let x = grid.node(j);
                    let yv = y_next[j];
                    let eps = STATE_FD_STEP * (1.0 + yv.abs());
                    let b_y =
                        (coeffs.b(t_next, x, yv + eps, uk) - coeffs.b(t_next, x, yv - eps, uk))
                            / (2.0 * eps);
                    let s_y = (coeffs.sigma(t_next, x, yv + eps, uk)
                        - coeffs.sigma(t_next, x, yv - eps, uk))
                        / (2.0 * eps);
                    let f_y = if (j_lo..=j_hi).contains(&j) {
                        cost.f_y(t_next, x, yv, uk)
                    } else {
                        0.0
                    };
                    row[j] += dt * (adj[j] + row[j] * b_y + q_next[j] * s_y + f_y);
                }
            },
        );

        // Regressor at t_k.
        for (p, b) in b_cur.iter_mut().enumerate() {
            *b -= paths.increment(p, k);
        }
        let b_mean = b_cur.iter().sum::<f64>() * inv_n;
        let sxx: f64 = b_cur.iter().map(|&b| (b - b_mean) * (b - b_mean)).sum();
        let degenerate = sxx <= SXX_FLOOR * n as f64;
        if degenerate {
            fallback_steps.push(k);
        }

        // Per-node OLS of the bracket on {1, B_{t_k}}; the regressed value
        // becomes the adjoint carried into the next (earlier) step.
        for j in 0..nx {
            let mut v_mean = 0.0;
            for p in 0..n {
                v_mean += p_cur[p * nx + j];
            }
            v_mean *= inv_n;
            let (b0, b1, se0, se1) = if degenerate {
                let mut ss = 0.0;
                for p in 0..n {
                    let r = p_cur[p * nx + j] - v_mean;
                    ss += r * r;
                }
                (v_mean, 0.0, (ss / ((n - 1) as f64 * n as f64)).sqrt(), 0.0)
            } else {
                let mut sxy = 0.0;
                for p in 0..n {
                    sxy += (b_cur[p] - b_mean) * (p_cur[p * nx + j] - v_mean);
                }
                let b1 = sxy / sxx;
                let b0 = v_mean - b1 * b_mean;
                let mut ss = 0.0;
                for p in 0..n {
                    let r = p_cur[p * nx + j] - b0 - b1 * b_cur[p];
                    ss += r * r;
                }
                let s2 = ss / (n - 2) as f64;
                (
                    b0,
                    b1,
                    (s2 * (inv_n + b_mean * b_mean / sxx)).sqrt(),
                    (s2 / sxx).sqrt(),
                )
            };
            beta0[row_base + j] = b0;
            beta1[row_base + j] = b1;
            se_beta0[row_base + j] = se0;
            se_beta1[row_base + j] = se1;
            for p in 0..n {
                p_cur[p * nx + j] = b0 + b1 * b_cur[p];
            }
        }
        q_next.copy_from_slice(&q[row_base..row_base + nx]);
    }

    fallback_steps.sort_unstable();
    Ok(AdjointField {
        grid,
        n_paths: n,
        first_path: paths.first_path(),
        beta0,
        beta1,
        q,
        se_beta0,
        se_beta1,
        se_q,
        p_terminal,
        fallback_steps,
    })
}
