//! Picard iteration of the mild form for state-dependent coefficients.
//!
//! The mild solution of
//!
//! ```text
//!     dY(t,x) = A Y dt + b(t, x, Y) dt + sigma(t, x, Y) dB(t)
//! ```
//!
//! (one Brownian motion common to all space points) satisfies the fixed
//! point equation, per path, with left-point time discretization:
//!
//! ```text
//!     Y(t_k) = K(t_k) xi
//!            + sum_{m<k} K(t_k - t_m) [ b(t_m, ., Y(t_m)) dt
//!                                     + sigma(t_m, ., Y(t_m)) dB_m ].
//! ```
//!
//! Iterating the right-hand side from the deterministic start contracts at
//! rate governed by the Lipschitz constant of the coefficients. The lag
//! sums are evaluated through the semigroup property of the kernel: with
//! `A = K(dt)` the one-step smoothing, the running sums obey
//! `S(k+1) = A (S(k) + dt b_k)` and `T(k+1) = A (T(k) + sigma_k dB_k)`,
//! which costs one banded matvec per step instead of a full lag sweep and
//! agrees with the literal lag sum to quadrature accuracy. The `K(t_k) xi`
//! term is still computed by direct per-lag quadrature, shared across
//! paths.
//!
//! Convergence is declared from the bundle statistic
//!
//! ```text
//!     h_i = sup_{k,j} mean over paths of (Y_i - Y_{i-1})^2(t_k, x_j),
//! ```
//!
//! the sup-mean-square increment of sweep `i`; the solver returns the first
//! iterate whose increment falls below tolerance. A small pilot subset of
//! paths estimates how many sweeps that takes so the full bundle can run
//! with one rolling field per path; the crossing is then re-validated on
//! the exact full-bundle `h_i` and the sweep count adjusted (and re-run,
//! deterministically) in the rare case the pilot misjudged.

use std::sync::Arc;

use rayon::prelude::*;

use crate::discretization::{self, BrownianPaths, SpaceTimeGrid};
use crate::error::{Error, Result};
use crate::kernel::{self, CompositeMedium, GreenOperator};
use crate::linear::{check_bundle, check_snapshots, InitialCondition, StateField};

/// Coefficient callable `(t, x, y, u) -> value`. Solvers without a control
/// pin `u = 0`.
pub type CoeffFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;

/// Drift and noise coefficients with certified Lipschitz (in `y`) and
/// linear-growth constants. The constants are spot-checked on random
/// samples whenever a solver consumes the coefficients.
#[derive(Clone)]
pub struct CoefficientSpec {
    b: CoeffFn,
    sigma: CoeffFn,
    lip: f64,
    growth: f64,
}

impl std::fmt::Debug for CoefficientSpec {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("CoefficientSpec")
            .field("lip", &self.lip)
            .field("growth", &self.growth)
            .finish()
    }
}

impl CoefficientSpec {
    pub fn new(b: CoeffFn, sigma: CoeffFn, lip: f64, growth: f64) -> Result<Self> {
        if !(lip.is_finite() && lip >= 0.0) {
            return Err(Error::invalid("lip", format!("must be finite and >= 0, got {lip}")));
        }
        if !(growth.is_finite() && growth >= 0.0) {
            return Err(Error::invalid(
                "growth",
                format!("must be finite and >= 0, got {growth}"),
            ));
        }
        Ok(CoefficientSpec { b, sigma, lip, growth })
    }

    /// No drift, constant noise amplitude.
    pub fn additive(sigma0: f64) -> Self {
        CoefficientSpec {
            b: Arc::new(|_, _, _, _| 0.0),
            sigma: Arc::new(move |_, _, _, _| sigma0),
            lip: 0.0,
            growth: sigma0.abs(),
        }
    }

    pub fn b(&self, t: f64, x: f64, y: f64, u: f64) -> f64 {
        (self.b)(t, x, y, u)
    }

    pub fn sigma(&self, t: f64, x: f64, y: f64, u: f64) -> f64 {
        (self.sigma)(t, x, y, u)
    }

    pub fn lip(&self) -> f64 {
        self.lip
    }

    pub fn growth(&self) -> f64 {
        self.growth
    }

    /// Spot-check the certified constants on `n` random tuples drawn from
    /// the given ranges (deterministic sampler). Tolerates 1e-9 relative
    /// slack so exact-equality cases (constant coefficients) pass.
    pub fn check_hypotheses(
        &self,
        t_max: f64,
        x_range: (f64, f64),
        u_range: (f64, f64),
        n: usize,
    ) -> Result<()> {
        const SEED: u64 = 0xC0FF_EE11;
        let y_span = 8.0;
        for i in 0..n as u64 {
            let u01 = |slot: u64| discretization::unit_uniform(SEED, i, slot, 0);
            let t = u01(0) * t_max;
            let x = x_range.0 + u01(1) * (x_range.1 - x_range.0);
            let u = u_range.0 + u01(2) * (u_range.1 - u_range.0);
            let y1 = (2.0 * u01(3) - 1.0) * y_span;
            let y2 = (2.0 * u01(4) - 1.0) * y_span;
            let slack = |s: f64| 1e-9 * (1.0 + s.abs()) + 1e-12;
            let db = (self.b(t, x, y1, u) - self.b(t, x, y2, u)).abs();
            let ds = (self.sigma(t, x, y1, u) - self.sigma(t, x, y2, u)).abs();
            let dy = (y1 - y2).abs();
            if db > self.lip * dy + slack(db) || ds > self.lip * dy + slack(ds) {
                return Err(Error::invalid(
                    "lip",
                    format!(
                        "certified Lipschitz constant {} violated at \
                         (t={t:.3}, x={x:.3}, u={u:.3}): |dy|={dy:.3e}, |db|={db:.3e}, |dsigma|={ds:.3e}",
                        self.lip
                    ),
                ));
            }
            for y in [y1, y2] {
                let cap = self.growth * (1.0 + y.abs());
                let bv = self.b(t, x, y, u).abs();
                let sv = self.sigma(t, x, y, u).abs();
                if bv > cap + slack(bv) || sv > cap + slack(sv) {
                    return Err(Error::invalid(
                        "growth",
                        format!(
                            "certified growth constant {} violated at \
                             (t={t:.3}, x={x:.3}, y={y:.3}, u={u:.3}): |b|={bv:.3e}, |sigma|={sv:.3e}",
                            self.growth
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Contraction history of a Picard run.
#[derive(Debug, Clone)]
pub struct PicardDiagnostics {
    /// Number of sweeps performed; the returned field is that iterate.
    pub iterations: usize,
    /// `increments[i]` is the sup-mean-square increment of sweep `i+1`.
    pub increments: Vec<f64>,
    /// Whether the final increment met the tolerance.
    pub converged: bool,
}

/// Iterate the mild form to its fixed point. Returns the first iterate
/// whose sup-mean-square increment over the bundle falls below `tol`,
/// together with the contraction history; errors with the history if
/// `max_iter` sweeps do not get there.
#[allow(clippy::too_many_arguments)]
pub fn picard_solve(
    medium: &CompositeMedium,
    coeffs: &CoefficientSpec,
    ic: &InitialCondition,
    grid: &SpaceTimeGrid,
    paths: &BrownianPaths,
    tol: f64,
    max_iter: usize,
    snapshot_steps: &[usize],
) -> Result<(StateField, PicardDiagnostics)> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::invalid("tol", format!("must be finite and positive, got {tol}")));
    }
    if max_iter < 1 {
        return Err(Error::invalid("max_iter", "need at least one sweep"));
    }
    check_bundle(paths, grid)?;
    check_snapshots(snapshot_steps, grid.nt())?;
    coeffs.check_hypotheses(
        grid.t_horizon(),
        (grid.node(0), grid.node(grid.nx() - 1)),
        (0.0, 0.0),
        200,
    )?;

    let engine = MildEngine::new(medium, ic, grid)?;

    // Pilot: estimate the crossing sweep on a subset, stopping early once
    // the pilot increment is safely below tolerance.
    let n_pilot = paths.n_paths().min(512);
    let pilot = engine.run(coeffs, paths, 0..n_pilot, max_iter, Some(0.3 * tol), &[])?;
    let mut n_run = match pilot.increments.iter().position(|&h| h <= tol) {
        Some(i) => i + 1,
        None => max_iter,
    };

    // Full bundle at the estimated sweep count; re-validate on the exact
    // bundle statistic and adjust deterministically if needed.
    loop {
        let run = engine.run(coeffs, paths, 0..paths.n_paths(), n_run, None, snapshot_steps)?;
        let crossing = run.increments.iter().position(|&h| h <= tol);
        match crossing {
            None if n_run < max_iter => {
                n_run = (n_run + 3).min(max_iter);
            }
            None => {
                return Err(Error::NoConvergence {
                    iterations: max_iter,
                    last: *run.increments.last().unwrap(),
                    tol,
                    history: run.increments,
                });
            }
            Some(i) if i + 1 == n_run => {
                let diag = PicardDiagnostics {
                    iterations: n_run,
                    increments: run.increments,
                    converged: true,
                };
                return Ok((run.field.unwrap(), diag));
            }
            Some(i) if i + 2 == n_run => {
                // Crossed one sweep earlier than estimated; the previous
                // iterate was captured during the same run.
                let diag = PicardDiagnostics {
                    iterations: n_run - 1,
                    increments: run.increments[..n_run - 1].to_vec(),
                    converged: true,
                };
                return Ok((run.field_prev.unwrap(), diag));
            }
            Some(i) => {
                // Crossed much earlier; re-run at the exact count (the
                // iterates, and hence the history prefix, are identical).
                n_run = i + 1;
            }
        }
    }
}

/// Semi-implicit Euler-Maruyama oracle for the same dynamics:
/// `(I - dt L) Y_{k+1} = Y_k + dt b(t_k, ., Y_k) + sigma(t_k, ., Y_k) dB_k`
/// with the finite-volume generator `L`. Unconditionally stable; for
/// additive noise the implicit solve fixes constants, so the scheme keeps
/// the exact mild structure of the noise term.
pub fn euler_maruyama_solve(
    medium: &CompositeMedium,
    coeffs: &CoefficientSpec,
    ic: &InitialCondition,
    grid: &SpaceTimeGrid,
    paths: &BrownianPaths,
    snapshot_steps: &[usize],
) -> Result<StateField> {
    check_bundle(paths, grid)?;
    check_snapshots(snapshot_steps, grid.nt())?;
    coeffs.check_hypotheses(
        grid.t_horizon(),
        (grid.node(0), grid.node(grid.nx() - 1)),
        (0.0, 0.0),
        200,
    )?;
    let xi = ic.sample(grid)?;
    let gen = discretization::discrete_generator(medium, grid);
    let factor = discretization::SemiImplicitFactor::new(&gen, grid.dt());
    let nx = grid.nx();
    let nt = grid.nt();
    let dt = grid.dt();
    let snaps = snapshot_steps.to_vec();

    let mut field = StateField::new_zeroed(grid, snaps.clone(), paths.first_path(), paths.n_paths());
    field.path_blocks_mut().enumerate().for_each(|(p, block)| {
        let mut y = xi.values().to_vec();
        let mut rhs = vec![0.0; nx];
        let mut si = 0;
        if snaps[si] == 0 {
            block[..nx].copy_from_slice(&y);
            si += 1;
        }
        for k in 0..nt {
            let t = k as f64 * dt;
            let db = paths.increment(p, k);
            for j in 0..nx {
                let x = grid.node(j);
                rhs[j] = y[j] + dt * coeffs.b(t, x, y[j], 0.0) + coeffs.sigma(t, x, y[j], 0.0) * db;
            }
            factor.solve_into(&rhs, &mut y);
            if si < snaps.len() && snaps[si] == k + 1 {
                block[si * nx..(si + 1) * nx].copy_from_slice(&y);
                si += 1;
            }
        }
    });
    Ok(field)
}

/// Shared pieces of a Picard run: deterministic term per step and the
/// one-step kernel operator.
struct MildEngine {
    grid: SpaceTimeGrid,
    /// `K(t_k) xi` for every step `k`.
    drift_det: Vec<Vec<f64>>,
    one_step: GreenOperator,
}

/// Result of running a fixed number of sweeps over a path range.
struct SweepRun {
    /// Full-bundle sup-mean-square increment per sweep.
    increments: Vec<f64>,
    /// Snapshot field of the final iterate (when snapshots were requested).
    field: Option<StateField>,
    /// Snapshot field of the previous iterate.
    field_prev: Option<StateField>,
}

impl MildEngine {
    fn new(medium: &CompositeMedium, ic: &InitialCondition, grid: &SpaceTimeGrid) -> Result<Self> {
        let xi = ic.sample(grid)?;
        let nodes = grid.nodes();
        let mut drift_det = Vec::with_capacity(grid.nt() + 1);
        for k in 0..=grid.nt() {
            drift_det.push(kernel::apply_green(medium, grid.time(k), &nodes, &xi)?);
        }
        let one_step = GreenOperator::new(medium, grid, grid.dt())?;
        Ok(MildEngine {
            grid: *grid,
            drift_det,
            one_step,
        })
    }

    /// Run `n_sweeps` Picard sweeps over `path_range`, accumulating the
    /// exact bundle increment statistics. With `early_stop`, stop as soon
    /// as a sweep's increment falls below it (pilot mode). When
    /// `snapshot_steps` is non-empty, capture the last two iterates there.
    fn run(
        &self,
        coeffs: &CoefficientSpec,
        paths: &BrownianPaths,
        path_range: std::ops::Range<usize>,
        n_sweeps: usize,
        early_stop: Option<f64>,
        snapshot_steps: &[usize],
    ) -> Result<SweepRun> {
        let nx = self.grid.nx();
        let nt = self.grid.nt();
        let dt = self.grid.dt();
        let n_paths = path_range.len();
        let rows = (nt + 1) * nx;
        let want_fields = !snapshot_steps.is_empty();

        // In pilot mode sweeps stop adaptively, which would make chunked
        // accumulators inconsistent; pilots are small, so run them in one
        // sequential chunk instead.
        let chunk = if early_stop.is_some() { n_paths } else { 64 };
        let starts: Vec<usize> = path_range.clone().step_by(chunk).collect();

        struct ChunkOut {
            acc: Vec<Vec<f64>>,
            sweeps_done: usize,
            last: Vec<f64>,
            prev: Vec<f64>,
        }

        let outs: Vec<ChunkOut> = starts
            .par_iter()
            .map(|&start| {
                let end = (start + chunk).min(path_range.end);
                let local = end - start;
                let mut acc: Vec<Vec<f64>> = Vec::new();
                let mut last = if want_fields {
                    vec![0.0; local * snapshot_steps.len() * nx]
                } else {
                    Vec::new()
                };
                let mut prev = last.clone();

                let mut buf = vec![0.0f64; rows];
                let mut s_chain = vec![0.0f64; nx];
                let mut t_chain = vec![0.0f64; nx];
                let mut chain_tmp = vec![0.0f64; nx];
                let mut new_row = vec![0.0f64; nx];
                let mut bv = vec![0.0f64; nx];
                let mut sv = vec![0.0f64; nx];
                let mut sweeps_done = n_sweeps;

                for (pl, p) in (start..end).enumerate() {
                    // Iterate 0: the deterministic part.
                    for k in 0..=nt {
                        buf[k * nx..(k + 1) * nx].copy_from_slice(&self.drift_det[k]);
                    }
                    let incr = paths.path(p);
                    for sweep in 0..sweeps_done {
                        if acc.len() <= sweep {
                            acc.push(vec![0.0; rows]);
                        }
                        s_chain.iter_mut().for_each(|v| *v = 0.0);
                        t_chain.iter_mut().for_each(|v| *v = 0.0);
                        for k in 0..=nt {
                            let base = k * nx;
                            let old = &buf[base..base + nx];
                            for j in 0..nx {
                                new_row[j] = self.drift_det[k][j] + s_chain[j] + t_chain[j];
                            }
                            let acc_row = &mut acc[sweep][base..base + nx];
                            for j in 0..nx {
                                let d = new_row[j] - old[j];
                                acc_row[j] += d * d;
                            }
                            if k < nt {
                                // Coefficients at the old iterate feed the
                                // chains that build the next one.
                                let t = k as f64 * dt;
                                for j in 0..nx {
                                    let x = self.grid.node(j);
                                    bv[j] = coeffs.b(t, x, old[j], 0.0);
                                    sv[j] = coeffs.sigma(t, x, old[j], 0.0);
                                }
                                let db = incr[k];
                                for j in 0..nx {
                                    chain_tmp[j] = s_chain[j] + dt * bv[j];
                                }
                                self.one_step.apply_into(&chain_tmp, &mut s_chain);
                                for j in 0..nx {
                                    chain_tmp[j] = t_chain[j] + sv[j] * db;
                                }
                                self.one_step.apply_into(&chain_tmp, &mut t_chain);
                            }
                            buf[base..base + nx].copy_from_slice(&new_row);
                        }
                        if want_fields && sweep + 2 >= sweeps_done {
                            let dst = if sweep + 1 == sweeps_done {
                                &mut last
                            } else {
                                &mut prev
                            };
                            for (si, &ks) in snapshot_steps.iter().enumerate() {
                                let src = &buf[ks * nx..(ks + 1) * nx];
                                let off = (pl * snapshot_steps.len() + si) * nx;
                                dst[off..off + nx].copy_from_slice(src);
                            }
                        }
                        if let Some(stop) = early_stop {
                            // Pilot: all paths of the (single) chunk have
                            // contributed to `acc[sweep]` only when pl is
                            // the last path; stop checks live there.
                            if pl + 1 == local {
                                let h = acc[sweep].iter().fold(0.0f64, |m, &v| m.max(v))
                                    / local as f64;
                                if h <= stop {
                                    sweeps_done = sweep + 1;
                                }
                            }
                        }
                    }
                }
                ChunkOut {
                    acc,
                    sweeps_done,
                    last,
                    prev,
                }
            })
            .collect();

        // Deterministic merge in chunk order.
        let sweeps_done = outs.iter().map(|o| o.sweeps_done).min().unwrap_or(n_sweeps);
        let mut total = vec![vec![0.0f64; rows]; sweeps_done];
        for o in &outs {
            for s in 0..sweeps_done {
                for (t, v) in total[s].iter_mut().zip(&o.acc[s]) {
                    *t += v;
                }
            }
        }
        let increments: Vec<f64> = total
            .iter()
            .map(|row| row.iter().fold(0.0f64, |m, &v| m.max(v)) / n_paths as f64)
            .collect();

        let (field, field_prev) = if want_fields {
            let mut f_last = StateField::new_zeroed(
                &self.grid,
                snapshot_steps.to_vec(),
                paths.first_path() + path_range.start,
                n_paths,
            );
            let mut f_prev = f_last.clone();
            let block = snapshot_steps.len() * nx;
            for (ci, &start) in starts.iter().enumerate() {
                let local = (start + chunk).min(path_range.end) - start;
                for pl in 0..local {
                    let p = start - path_range.start + pl;
                    let src = &outs[ci].last[pl * block..(pl + 1) * block];
                    for (si, _) in snapshot_steps.iter().enumerate() {
                        f_last
                            .slice_mut(p, si)
                            .copy_from_slice(&src[si * nx..(si + 1) * nx]);
                    }
                    let src = &outs[ci].prev[pl * block..(pl + 1) * block];
                    for (si, _) in snapshot_steps.iter().enumerate() {
                        f_prev
                            .slice_mut(p, si)
                            .copy_from_slice(&src[si * nx..(si + 1) * nx]);
                    }
                }
            }
            (Some(f_last), Some(f_prev))
        } else {
            (None, None)
        };

        Ok(SweepRun {
            increments,
            field,
            field_prev,
        })
    }
}
