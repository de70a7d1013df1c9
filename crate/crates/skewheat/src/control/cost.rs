//! Cost functionals for the stochastic control problem.
//!
//! A cost pairs a running density `f(t, x, y, u)` integrated over a spatial
//! window and over time with a terminal density `g(y)` integrated over the
//! same window at the horizon:
//!
//! ```text
//!     J(u) = E[ ∫_0^T ∫_window f(t, x, Y(t,x), u(t)) ρ(x) dx dt
//!               + ∫_window g(Y(T,x)) ρ(x) dx ].
//! ```
//!
//! The sign convention is cost-positive: the optimizer minimizes J.
//! Partial derivatives f_y, f_u, g_y are supplied explicitly and cross-checked
//! against finite differences at construction.

use std::sync::Arc;

use crate::discretization::SpaceTimeGrid;
use crate::error::{Error, Result};

/// Running cost density and its partials; arguments are (t, x, y, u).
pub type RunningCostFn = Arc<dyn Fn(f64, f64, f64, f64) -> f64 + Send + Sync>;
/// Terminal cost density and its derivative; argument is y.
pub type TerminalCostFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Relative tolerance for the finite-difference partial cross-check.
const PARTIAL_TOL: f64 = 1e-5;

/// Running + terminal cost with an explicit spatial integration window.
#[derive(Clone)]
pub struct CostSpec {
    f: RunningCostFn,
    f_y: RunningCostFn,
    f_u: RunningCostFn,
    g: TerminalCostFn,
    g_y: TerminalCostFn,
    x_lo: f64,
    x_hi: f64,
}

impl std::fmt::Debug for CostSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CostSpec")
            .field("x_lo", &self.x_lo)
            .field("x_hi", &self.x_hi)
            .finish_non_exhaustive()
    }
}

impl CostSpec {
    /// Builds a cost from densities and partials, validating the partials by
    /// central finite differences on a deterministic sample of arguments.
    pub fn new(
        f: RunningCostFn,
        f_y: RunningCostFn,
        f_u: RunningCostFn,
        g: TerminalCostFn,
        g_y: TerminalCostFn,
        window: (f64, f64),
    ) -> Result<Self> {
        let (x_lo, x_hi) = window;
        if !(x_lo.is_finite() && x_hi.is_finite() && x_lo < x_hi) {
            return Err(Error::invalid(
                "cost_window",
                format!("window must satisfy x_lo < x_hi with finite ends, got [{x_lo}, {x_hi}]"),
            ));
        }
        let cost = Self { f, f_y, f_u, g, g_y, x_lo, x_hi };
        cost.validate()?;
        Ok(cost)
    }

    /// Quadratic state tracking with control effort penalty:
    /// `f = y^2 + theta u^2`, `g = gamma y^2`.
    pub fn temperature_control(theta: f64, gamma: f64, window: (f64, f64)) -> Result<Self> {
        for (name, v) in [("theta", theta), ("gamma", gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, format!("must be nonnegative and finite, got {v}")));
            }
        }
        Self::new(
            Arc::new(move |_t, _x, y, u| y * y + theta * u * u),
            Arc::new(|_t, _x, y, _u| 2.0 * y),
            Arc::new(move |_t, _x, _y, u| 2.0 * theta * u),
            Arc::new(move |y| gamma * y * y),
            Arc::new(move |y| 2.0 * gamma * y),
            window,
        )
    }

    /// Linear heat value with control effort penalty and quadratic terminal
    /// tracking: `f = gamma1 y + gamma2 u^2`, `g = gamma3 y^2`.
    pub fn heat_storage(gamma1: f64, gamma2: f64, gamma3: f64, window: (f64, f64)) -> Result<Self> {
        for (name, v) in [("gamma1", gamma1), ("gamma2", gamma2), ("gamma3", gamma3)] {
            if !v.is_finite() {
                return Err(Error::invalid(name, format!("must be finite, got {v}")));
            }
        }
        Self::new(
            Arc::new(move |_t, _x, y, u| gamma1 * y + gamma2 * u * u),
            Arc::new(move |_t, _x, _y, _u| gamma1),
            Arc::new(move |_t, _x, _y, u| 2.0 * gamma2 * u),
            Arc::new(move |y| gamma3 * y * y),
            Arc::new(move |y| 2.0 * gamma3 * y),
            window,
        )
    }

    /// Cross-checks the stated partials against central finite differences on
    /// a deterministic grid of (t, x, y, u) samples.
    fn validate(&self) -> Result<()> {
        let ts = [0.0, 0.37, 1.0, 2.5];
        let xs = [self.x_lo, 0.5 * (self.x_lo + self.x_hi), self.x_hi];
        let ys = [-3.0, -0.7, 0.0, 0.9, 2.4];
        let us = [-1.5, -0.2, 0.0, 0.6, 1.8];
        let eps = 1e-5;
        for &t in &ts {
            for &x in &xs {
                for &y in &ys {
                    for &u in &us {
                        let fd_y = ((self.f)(t, x, y + eps, u) - (self.f)(t, x, y - eps, u)) / (2.0 * eps);
                        let stated_y = (self.f_y)(t, x, y, u);
                        let scale = fd_y.abs().max(stated_y.abs()).max(1.0);
                        if (fd_y - stated_y).abs() > PARTIAL_TOL * scale {
                            return Err(Error::invalid(
                                "cost",
                                format!("f_y at (t={t}, x={x}, y={y}, u={u}) is {stated_y} but finite differences give {fd_y}"),
                            ));
                        }
                        let fd_u = ((self.f)(t, x, y, u + eps) - (self.f)(t, x, y, u - eps)) / (2.0 * eps);
                        let stated_u = (self.f_u)(t, x, y, u);
                        let scale = fd_u.abs().max(stated_u.abs()).max(1.0);
                        if (fd_u - stated_u).abs() > PARTIAL_TOL * scale {
                            return Err(Error::invalid(
                                "cost",
                                format!("f_u at (t={t}, x={x}, y={y}, u={u}) is {stated_u} but finite differences give {fd_u}"),
                            ));
                        }
                    }
                    let fd_g = ((self.g)(y + eps) - (self.g)(y - eps)) / (2.0 * eps);
                    let stated_g = (self.g_y)(y);
                    let scale = fd_g.abs().max(stated_g.abs()).max(1.0);
                    if (fd_g - stated_g).abs() > PARTIAL_TOL * scale {
                        return Err(Error::invalid(
                            "cost",
                            format!("g_y at y={y} is {stated_g} but finite differences give {fd_g}"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Running cost density at (t, x, y, u).
    pub fn f(&self, t: f64, x: f64, y: f64, u: f64) -> f64 {
        (self.f)(t, x, y, u)
    }

    /// State partial of the running cost.
    pub fn f_y(&self, t: f64, x: f64, y: f64, u: f64) -> f64 {
        (self.f_y)(t, x, y, u)
    }

    /// Control partial of the running cost.
    pub fn f_u(&self, t: f64, x: f64, y: f64, u: f64) -> f64 {
        (self.f_u)(t, x, y, u)
    }

    /// Terminal cost density at y.
    pub fn g(&self, y: f64) -> f64 {
        (self.g)(y)
    }

    /// Derivative of the terminal cost density.
    pub fn g_y(&self, y: f64) -> f64 {
        (self.g_y)(y)
    }

    /// Spatial integration window (x_lo, x_hi).
    pub fn window(&self) -> (f64, f64) {
        (self.x_lo, self.x_hi)
    }

    /// Grid indices (j_lo, j_hi) of the window ends; both must be grid nodes.
    pub fn window_indices(&self, grid: &SpaceTimeGrid) -> Result<(usize, usize)> {
        let j_lo = grid.index_of(self.x_lo).ok_or_else(|| {
            Error::invalid(
                "cost_window",
                format!("window end {} is not a grid node (dx = {})", self.x_lo, grid.dx()),
            )
        })?;
        let j_hi = grid.index_of(self.x_hi).ok_or_else(|| {
            Error::invalid(
                "cost_window",
                format!("window end {} is not a grid node (dx = {})", self.x_hi, grid.dx()),
            )
        })?;
        Ok((j_lo, j_hi))
    }
}

/// Density-weighted trapezoid weights over the cost window.
///
/// `weights[i]` multiplies the value at node `j_lo + i`; end nodes carry half
/// weight.  The window must span at least one cell.
pub(crate) fn window_weights(
    grid: &SpaceTimeGrid,
    rho_at: impl Fn(f64) -> f64,
    j_lo: usize,
    j_hi: usize,
) -> Result<Vec<f64>> {
    if j_hi <= j_lo {
        return Err(Error::invalid(
            "cost_window",
            "window must span at least one grid cell",
        ));
    }
    let dx = grid.dx();
    let n = j_hi - j_lo + 1;
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let j = j_lo + i;
        let half_end = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        weights.push(half_end * dx * rho_at(grid.node(j)));
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_evaluate() {
        let tc = CostSpec::temperature_control(0.3, 2.0, (-1.0, 1.0)).expect("valid preset");
        assert_eq!(tc.f(0.0, 0.0, 2.0, 1.0), 4.0 + 0.3);
        assert_eq!(tc.f_y(0.0, 0.0, 2.0, 1.0), 4.0);
        assert_eq!(tc.f_u(0.0, 0.0, 2.0, 1.0), 0.6);
        assert_eq!(tc.g(3.0), 18.0);
        assert_eq!(tc.g_y(3.0), 12.0);

        let hs = CostSpec::heat_storage(1.5, 0.25, 0.0, (-1.0, 1.0)).expect("valid preset");
        assert_eq!(hs.f(0.0, 0.0, 2.0, 2.0), 3.0 + 1.0);
        assert_eq!(hs.f_y(0.0, 0.0, 2.0, 2.0), 1.5);
        assert_eq!(hs.f_u(0.0, 0.0, 2.0, 2.0), 1.0);
        assert_eq!(hs.g_y(5.0), 0.0);
    }

    #[test]
    fn lying_partial_is_rejected() {
        let err = CostSpec::new(
            Arc::new(|_t, _x, y, _u| y * y),
            Arc::new(|_t, _x, _y, _u| 0.0), // claims f is y-independent
            Arc::new(|_t, _x, _y, _u| 0.0),
            Arc::new(|_| 0.0),
            Arc::new(|_| 0.0),
            (-1.0, 1.0),
        )
        .unwrap_err();
        println!("partial mismatch: {err}");
    }

    #[test]
    fn window_indices_require_grid_nodes() {
        let grid = SpaceTimeGrid::new(-2.0, 2.0, 21, 1.0, 10).expect("valid grid");
        let cost = CostSpec::temperature_control(1.0, 0.0, (-1.0, 1.0)).expect("valid preset");
        let (lo, hi) = cost.window_indices(&grid).expect("node-aligned window");
        assert_eq!((lo, hi), (5, 15));

        let off = CostSpec::temperature_control(1.0, 0.0, (-1.03, 1.0)).expect("valid preset");
        assert!(off.window_indices(&grid).is_err(), "off-node window end must be rejected");
    }

    #[test]
    fn window_weights_integrate_constants_exactly() {
        let grid = SpaceTimeGrid::new(-2.0, 2.0, 41, 1.0, 10).expect("valid grid");
        let w = window_weights(&grid, |_| 1.0, 10, 30).expect("weights");
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-12, "unit density over [-1,1] must give 2, got {total}");

        let w = window_weights(&grid, |x| if x <= 0.0 { 1.0 } else { 3.0 }, 10, 30).expect("weights");
        let total: f64 = w.iter().sum();
        // rho integrates to 1*1 + 3*1 = 4 up to the half-cell at the interface
        // node, which the trapezoid rule charges at the left density.
        let expected = 4.0 - 0.5 * grid.dx() * (3.0 - 1.0);
        assert!((total - expected).abs() < 1e-12, "expected {expected}, got {total}");
    }
}
