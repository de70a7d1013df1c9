//! Uniform space-time grids with the interface pinned to a node.

use crate::error::{Error, Result};

/// A uniform grid on `[x_min, x_max] x [0, t_horizon]` with `nx` space
/// nodes and `nt` time steps. The interface `x = 0` must fall exactly on a
/// space node; nodes are generated as integer multiples of `dx` from that
/// node, so the interface coordinate is exactly `0.0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeGrid {
    dx: f64,
    nx: usize,
    /// Index of the interface node.
    j0: usize,
    dt: f64,
    nt: usize,
    t_horizon: f64,
}

impl SpaceTimeGrid {
    /// Build a grid. Requires `x_min < 0 < x_max`, `nx >= 3`, `nt >= 1`,
    /// a positive horizon, and the origin on a node (within 1e-9 dx).
    pub fn new(x_min: f64, x_max: f64, nx: usize, t_horizon: f64, nt: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_min >= x_max {
            return Err(Error::invalid("x_min", "need finite x_min < x_max".to_string()));
        }
        if x_min >= 0.0 || x_max <= 0.0 {
            return Err(Error::invalid(
                "x_min",
                format!("domain [{x_min}, {x_max}] must straddle the interface at 0"),
            ));
        }
        if nx < 3 {
            return Err(Error::invalid("nx", format!("need at least 3 nodes, got {nx}")));
        }
        if nt < 1 {
            return Err(Error::invalid("nt", format!("need at least 1 time step, got {nt}")));
        }
        if !t_horizon.is_finite() || t_horizon <= 0.0 {
            return Err(Error::invalid(
                "t_horizon",
                format!("must be finite and positive, got {t_horizon}"),
            ));
        }
        let dx = (x_max - x_min) / (nx - 1) as f64;
        let j_real = -x_min / dx;
        let j0 = j_real.round();
        if (j_real - j0).abs() > 1e-9 {
            return Err(Error::invalid(
                "nx",
                format!(
                    "the interface x=0 must fall on a grid node; \
                     -x_min/dx = {j_real} is {} from the nearest integer",
                    (j_real - j0).abs()
                ),
            ));
        }
        let j0 = j0 as usize;
        debug_assert!(j0 > 0 && j0 < nx - 1);
        Ok(SpaceTimeGrid {
            dx,
            nx,
            j0,
            dt: t_horizon / nt as f64,
            nt,
            t_horizon,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn t_horizon(&self) -> f64 {
        self.t_horizon
    }

    /// Index of the interface node (the node whose coordinate is exactly 0).
    pub fn interface_index(&self) -> usize {
        self.j0
    }

    /// Coordinate of node `j`; exact zero at the interface index.
    pub fn node(&self, j: usize) -> f64 {
        (j as f64 - self.j0 as f64) * self.dx
    }

    /// All node coordinates.
    pub fn nodes(&self) -> Vec<f64> {
        (0..self.nx).map(|j| self.node(j)).collect()
    }

    /// Time of step `k` (0 <= k <= nt).
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// All step times including both endpoints.
    pub fn times(&self) -> Vec<f64> {
        (0..=self.nt).map(|k| self.time(k)).collect()
    }

    /// Index of the node at coordinate `x`, if `x` lies on the grid
    /// (within 1e-9 dx).
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let pos = x / self.dx + self.j0 as f64;
        let j = pos.round();
        if (pos - j).abs() <= 1e-9 && j >= 0.0 && (j as usize) < self.nx {
            Some(j as usize)
        } else {
            None
        }
    }
}

/// Node values of a function on a grid's space axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: SpaceTimeGrid,
    values: Vec<f64>,
}

impl GridFunction {
    /// Sample a closure at the grid nodes.
    pub fn from_fn(grid: &SpaceTimeGrid, f: impl Fn(f64) -> f64) -> Self {
        GridFunction {
            grid: *grid,
            values: (0..grid.nx()).map(|j| f(grid.node(j))).collect(),
        }
    }

    /// Wrap explicit node values; the length must match the grid.
    pub fn from_values(grid: &SpaceTimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.nx() {
            return Err(Error::invalid(
                "values",
                format!("length {} does not match nx = {}", values.len(), grid.nx()),
            ));
        }
        Ok(GridFunction { grid: *grid, values })
    }

    /// The constant function.
    pub fn constant(grid: &SpaceTimeGrid, c: f64) -> Self {
        GridFunction {
            grid: *grid,
            values: vec![c; grid.nx()],
        }
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Piecewise-linear interpolation, constant beyond the end nodes.
    pub fn interp_clamped(&self, x: f64) -> f64 {
        let g = &self.grid;
        let pos = (x - g.node(0)) / g.dx();
        if pos <= 0.0 {
            return self.values[0];
        }
        let last = (g.nx() - 1) as f64;
        if pos >= last {
            return self.values[g.nx() - 1];
        }
        let j = pos as usize;
        let theta = pos - j as f64;
        self.values[j] * (1.0 - theta) + self.values[j + 1] * theta
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interface_lands_exactly_on_a_node() {
        let g = SpaceTimeGrid::new(-4.0, 8.0, 25, 1.0, 10).unwrap();
        let j0 = g.interface_index();
        assert_eq!(j0, 8); // dx = 0.5
        assert_eq!(g.node(j0), 0.0);
        assert_eq!(g.index_of(0.0), Some(j0));
        assert_eq!(g.index_of(-4.0), Some(0));
        assert_eq!(g.index_of(8.0), Some(24));
        assert_eq!(g.index_of(0.26), None);
    }

    #[test]
    fn rejects_grids_that_miss_the_interface() {
        // Spacing that puts 0 between nodes.
        assert!(SpaceTimeGrid::new(-0.4, 1.0, 4, 1.0, 10).is_err());
        assert!(SpaceTimeGrid::new(1.0, 2.0, 5, 1.0, 10).is_err());
        assert!(SpaceTimeGrid::new(-1.0, 1.0, 2, 1.0, 10).is_err());
        assert!(SpaceTimeGrid::new(-1.0, 1.0, 5, 0.0, 10).is_err());
        assert!(SpaceTimeGrid::new(-1.0, 1.0, 5, 1.0, 0).is_err());
    }

    #[test]
    fn interpolation_clamps_to_end_values() {
        let g = SpaceTimeGrid::new(-1.0, 1.0, 5, 1.0, 4).unwrap();
        let f = GridFunction::from_fn(&g, |x| 2.0 * x);
        assert_eq!(f.interp_clamped(-5.0), -2.0);
        assert_eq!(f.interp_clamped(5.0), 2.0);
        assert!((f.interp_clamped(0.25) - 0.5).abs() < 1e-15);
    }
}
