//! Closed-form transition kernel of the two-material heat generator.
//!
//! The medium has diffusivity/density `(a1, rho1)` on `z <= 0` and
//! `(a2, rho2)` on `z > 0`. With the half-line rescaling
//!
//! ```text
//!     h(z) = z / sqrt(a1)   (z <= 0),        h(z) = z / sqrt(a2)   (z > 0),
//! ```
//!
//! the transition kernel of the generator `1/(2 rho) d/dx (a rho d/dx .)`
//! started at `x` is, for elapsed time `tau > 0`,
//!
//! ```text
//!     G(tau, x, z) = (2 pi tau)^{-1/2} a(z)^{-1/2}
//!         * [ exp( -(h(x) - h(z))^2 / (2 tau) )
//!           + lambda * sign(z) * exp( -(|h(x)| + |h(z)|)^2 / (2 tau) ) ],
//! ```
//!
//! with `sign(z) = -1` on `z <= 0`, `+1` on `z > 0`, and transmission
//! coefficient
//!
//! ```text
//!     lambda = (rho2 sqrt(a2) - rho1 sqrt(a1)) / (rho2 sqrt(a2) + rho1 sqrt(a1)).
//! ```
//!
//! The first term is free diffusion in the rescaled coordinate; the second
//! is a reflection at the interface whose weight measures the impedance
//! mismatch. `G` integrates to exactly 1 in `z`, is strictly positive
//! (|lambda| < 1 and the reflected Gaussian never exceeds the direct one),
//! and satisfies the transmission conditions: the two one-sided interface
//! limits have ratio `rho2/rho1`, and the flux `a(x) rho(x) dG/dx` is
//! continuous across the interface.
//!
//! Evaluation uses the form `exp(A) * (1 + lambda * sign * exp(B - A))`
//! with `B <= A`, which never overflows and loses no precision to
//! cancellation. Integrals against `G` are computed by composite
//! Gauss-Legendre quadrature in the rescaled coordinate `w = h(z)`, where
//! the integrand is a plain Gaussian mixture and `dz = sqrt(a) dw` cancels
//! the `a(z)^{-1/2}` prefactor.

use crate::discretization::GridFunction;
use crate::error::{Error, Result};
use crate::quad;

/// 1 / sqrt(2 pi).
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Truncation radius of the quadrature window, in units of sqrt(tau) of the
/// rescaled coordinate. The neglected Gaussian tail is below 1e-16.
const TAIL_RADIUS: f64 = 8.5;

/// Target quadrature panel width in units of sqrt(tau).
const PANEL_WIDTH: f64 = 0.45;

/// A two-material composite medium: piecewise-constant diffusivity `a` and
/// density `rho`, with the interface at the origin. All four coefficients
/// are strictly positive and finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeMedium {
    a1: f64,
    a2: f64,
    rho1: f64,
    rho2: f64,
}

/// The constants in the Gaussian envelope of the kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelBounds {
    /// Prefactor `(1 + |lambda|) (a1^{-1/2} + a2^{-1/2})`.
    pub c_lambda: f64,
    /// Exponent rate `min(1/a1, 1/a2)`; the envelope decays like
    /// `exp(-c_diff (x-z)^2 / (2 tau))`.
    pub c_diff: f64,
    /// Combined constant `c_lambda * sqrt(c_diff)`.
    pub c1: f64,
}

impl KernelBounds {
    /// Pointwise Gaussian envelope: `G(tau, x, z) <= envelope(tau, x, z)`
    /// for every medium, time and pair of points.
    pub fn envelope(&self, tau: f64, x: f64, z: f64) -> f64 {
        let d = x - z;
        self.c_lambda * INV_SQRT_2PI / tau.sqrt() * (-self.c_diff * d * d / (2.0 * tau)).exp()
    }
}

/// Which side of the interface a one-sided limit approaches from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterfaceSide {
    Left,
    Right,
}

impl CompositeMedium {
    /// Build a medium from its four positive coefficients.
    pub fn new(a1: f64, a2: f64, rho1: f64, rho2: f64) -> Result<Self> {
        for (name, v) in [("a1", a1), ("a2", a2), ("rho1", rho1), ("rho2", rho2)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(
                    name,
                    format!("must be a finite positive number, got {v}"),
                ));
            }
        }
        Ok(CompositeMedium { a1, a2, rho1, rho2 })
    }

    pub fn a1(&self) -> f64 {
        self.a1
    }
    pub fn a2(&self) -> f64 {
        self.a2
    }
    pub fn rho1(&self) -> f64 {
        self.rho1
    }
    pub fn rho2(&self) -> f64 {
        self.rho2
    }

    /// Diffusivity at a point; the interface itself belongs to the left.
    pub fn a_at(&self, x: f64) -> f64 {
        if x <= 0.0 {
            self.a1
        } else {
            self.a2
        }
    }

    /// Density at a point; the interface itself belongs to the left.
    pub fn rho_at(&self, x: f64) -> f64 {
        if x <= 0.0 {
            self.rho1
        } else {
            self.rho2
        }
    }

    /// Transmission coefficient; always in (-1, 1).
    pub fn lambda(&self) -> f64 {
        let zl = self.rho1 * self.a1.sqrt();
        let zr = self.rho2 * self.a2.sqrt();
        (zr - zl) / (zr + zl)
    }

    /// Half-line rescaling that maps the medium to unit diffusivity.
    pub fn h(&self, z: f64) -> f64 {
        if z <= 0.0 {
            z / self.a1.sqrt()
        } else {
            z / self.a2.sqrt()
        }
    }

    /// Constants of the Gaussian envelope.
    pub fn bounds(&self) -> KernelBounds {
        let lambda = self.lambda();
        let c_lambda = (1.0 + lambda.abs()) * (1.0 / self.a1.sqrt() + 1.0 / self.a2.sqrt());
        let c_diff = (1.0 / self.a1).min(1.0 / self.a2);
        KernelBounds {
            c_lambda,
            c_diff,
            c1: c_lambda * c_diff.sqrt(),
        }
    }
}

fn check_tau_positive(tau: f64) -> Result<()> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(Error::invalid(
            "tau",
            format!("elapsed time must be finite and positive, got {tau}"),
        ));
    }
    Ok(())
}

/// Kernel value in the rescaled coordinate, without the `a(z)^{-1/2}`
/// prefactor: the quantity `(2 pi tau)^{-1/2} [exp(main) + l s exp(refl)]`
/// evaluated at `w = h(z)` on the side selected by `sign`.
#[inline]
fn g_rescaled(tau: f64, hx: f64, w: f64, lambda_sign: f64) -> f64 {
    let inv_2tau = 0.5 / tau;
    let d = w - hx;
    let r = hx.abs() + w.abs();
    let e_main = -d * d * inv_2tau;
    let e_refl = -r * r * inv_2tau;
    // e_refl <= e_main, so the correction factor is in [1 - |lambda|, 1 + |lambda|].
    INV_SQRT_2PI / tau.sqrt() * e_main.exp() * (1.0 + lambda_sign * (e_refl - e_main).exp())
}

/// Evaluate the kernel `G(tau, x, z)`.
pub fn green(medium: &CompositeMedium, tau: f64, x: f64, z: f64) -> Result<f64> {
    check_tau_positive(tau)?;
    let lambda = medium.lambda();
    let (sign, a_side) = if z <= 0.0 {
        (-1.0, medium.a1)
    } else {
        (1.0, medium.a2)
    };
    Ok(g_rescaled(tau, medium.h(x), medium.h(z), lambda * sign) / a_side.sqrt())
}

/// One-sided interface limit `lim_{z -> 0+-} G(tau, x, z)`.
pub fn green_one_sided(
    medium: &CompositeMedium,
    tau: f64,
    x: f64,
    side: InterfaceSide,
) -> Result<f64> {
    check_tau_positive(tau)?;
    let lambda = medium.lambda();
    let (sign, a_side) = match side {
        InterfaceSide::Left => (-1.0, medium.a1),
        InterfaceSide::Right => (1.0, medium.a2),
    };
    Ok(g_rescaled(tau, medium.h(x), 0.0, lambda * sign) / a_side.sqrt())
}

/// Visit the quadrature nodes of `integral G(tau, x, z) phi(z) dz` as pairs
/// `(z, weight)` with `sum weight * phi(z)` the quadrature value. Works in
/// the rescaled coordinate, splits panels at the interface, and widens the
/// window so the reflection term near the interface is always covered.
fn foreach_kernel_weight(
    medium: &CompositeMedium,
    tau: f64,
    x: f64,
    mut sink: impl FnMut(f64, f64),
) {
    let lambda = medium.lambda();
    let hx = medium.h(x);
    let s = tau.sqrt();
    let mut wlo = hx - TAIL_RADIUS * s;
    let mut whi = hx + TAIL_RADIUS * s;
    // The reflected Gaussian is centered (in |w|) at the interface; when the
    // start point is close enough for it to matter, extend the window so the
    // region |w| <= TAIL_RADIUS sqrt(tau) - |hx| is covered on both sides.
    let ext = (TAIL_RADIUS * s - hx.abs()).max(0.0);
    wlo = wlo.min(-ext);
    whi = whi.max(ext);

    let sqrt_a1 = medium.a1.sqrt();
    let sqrt_a2 = medium.a2.sqrt();
    let mut run_segment = |lo: f64, hi: f64, sign: f64, sqrt_a: f64| {
        if hi <= lo {
            return;
        }
        let panels = (((hi - lo) / (PANEL_WIDTH * s)).ceil() as usize).clamp(1, 400);
        let ls = lambda * sign;
        quad::foreach_node(lo, hi, panels, |w, wq| {
            sink(w * sqrt_a, wq * g_rescaled(tau, hx, w, ls));
        });
    };

    if whi <= 0.0 {
        run_segment(wlo, whi, -1.0, sqrt_a1);
    } else if wlo >= 0.0 {
        run_segment(wlo, whi, 1.0, sqrt_a2);
    } else {
        run_segment(wlo, 0.0, -1.0, sqrt_a1);
        run_segment(0.0, whi, 1.0, sqrt_a2);
    }
}

/// Total mass `integral G(tau, x, z) dz`; equals 1 up to quadrature error
/// (a few 1e-14).
pub fn green_mass(medium: &CompositeMedium, tau: f64, x: f64) -> Result<f64> {
    check_tau_positive(tau)?;
    let mut mass = 0.0;
    foreach_kernel_weight(medium, tau, x, |_, w| mass += w);
    Ok(mass)
}

/// Smooth a grid function by the kernel: returns
/// `integral G(tau, x_i, z) f(z) dz` for every target `x_i`. The state `f`
/// is extended as a constant beyond its grid (consistent with the zero-flux
/// discrete boundary), which preserves constants exactly. Elapsed times
/// below `dt/10` of `f`'s grid degenerate to interpolation of `f` itself.
pub fn apply_green(
    medium: &CompositeMedium,
    tau: f64,
    targets: &[f64],
    f: &GridFunction,
) -> Result<Vec<f64>> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(Error::invalid(
            "tau",
            format!("elapsed time must be finite and non-negative, got {tau}"),
        ));
    }
    let tau_min = f.grid().dt() / 10.0;
    if tau < tau_min {
        return Ok(targets.iter().map(|&x| f.interp_clamped(x)).collect());
    }
    Ok(targets
        .iter()
        .map(|&x| {
            let mut acc = 0.0;
            foreach_kernel_weight(medium, tau, x, |z, w| acc += w * f.interp_clamped(z));
            acc
        })
        .collect())
}

/// One row of a [`GreenOperator`]: weights against a contiguous node span.
#[derive(Debug, Clone)]
struct BandRow {
    start: usize,
    weights: Vec<f64>,
}

/// The kernel smoothing at a fixed elapsed time, discretized on a grid as a
/// banded matrix acting on node values: row `i` holds the quadrature weights
/// of `integral G(tau, x_i, z) f(z) dz` with `f` piecewise linear and
/// constant-extended. Rows sum to the kernel mass (1 up to quadrature), so
/// constants are preserved to the same accuracy.
#[derive(Debug, Clone)]
pub struct GreenOperator {
    nx: usize,
    rows: Vec<BandRow>,
}

impl GreenOperator {
    /// Discretize the smoothing at elapsed time `tau` on the grid of
    /// `grid`. Times below `dt/10` produce the identity.
    pub fn new(
        medium: &CompositeMedium,
        grid: &crate::discretization::SpaceTimeGrid,
        tau: f64,
    ) -> Result<Self> {
        if !tau.is_finite() || tau < 0.0 {
            return Err(Error::invalid(
                "tau",
                format!("elapsed time must be finite and non-negative, got {tau}"),
            ));
        }
        let nx = grid.nx();
        if tau < grid.dt() / 10.0 {
            let rows = (0..nx)
                .map(|i| BandRow {
                    start: i,
                    weights: vec![1.0],
                })
                .collect();
            return Ok(GreenOperator { nx, rows });
        }
        let x0 = grid.node(0);
        let dx = grid.dx();
        let mut dense = vec![0.0f64; nx];
        let mut rows = Vec::with_capacity(nx);
        for i in 0..nx {
            let mut jmin = nx;
            let mut jmax = 0usize;
            foreach_kernel_weight(medium, tau, grid.node(i), |z, w| {
                // Scatter onto the two neighboring nodes; clamp beyond the
                // grid so boundary rows absorb the constant extension.
                let pos = (z - x0) / dx;
                if pos <= 0.0 {
                    dense[0] += w;
                    jmin = 0;
                    jmax = jmax.max(0);
                } else if pos >= (nx - 1) as f64 {
                    dense[nx - 1] += w;
                    jmin = jmin.min(nx - 1);
                    jmax = nx - 1;
                } else {
                    let j = pos as usize;
                    let theta = pos - j as f64;
                    dense[j] += w * (1.0 - theta);
                    dense[j + 1] += w * theta;
                    jmin = jmin.min(j);
                    jmax = jmax.max(j + 1);
                }
            });
            debug_assert!(jmin <= jmax, "empty kernel row");
            let weights = dense[jmin..=jmax].to_vec();
            dense[jmin..=jmax].iter_mut().for_each(|v| *v = 0.0);
            rows.push(BandRow {
                start: jmin,
                weights,
            });
        }
        Ok(GreenOperator { nx, rows })
    }

    /// Number of grid nodes (rows and columns of the operator).
    pub fn len(&self) -> usize {
        self.nx
    }

    pub fn is_empty(&self) -> bool {
        self.nx == 0
    }

    /// `dst = K src`. Panics if slice lengths differ from the grid size.
    pub fn apply_into(&self, src: &[f64], dst: &mut [f64]) {
        assert_eq!(src.len(), self.nx);
        assert_eq!(dst.len(), self.nx);
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            let s = row.start;
            for (k, &w) in row.weights.iter().enumerate() {
                acc += w * src[s + k];
            }
            dst[i] = acc;
        }
    }

    /// Allocating variant of [`GreenOperator::apply_into`].
    pub fn apply(&self, src: &[f64]) -> Vec<f64> {
        let mut dst = vec![0.0; self.nx];
        self.apply_into(src, &mut dst);
        dst
    }

    /// Row sums — the discrete kernel masses at each node.
    pub fn row_sums(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.weights.iter().sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{GridFunction, SpaceTimeGrid};

    const MASS_TOL: f64 = 1e-12;

    fn medium(a1: f64, a2: f64, r1: f64, r2: f64) -> CompositeMedium {
        CompositeMedium::new(a1, a2, r1, r2).unwrap()
    }

    #[test]
    fn lambda_matches_hand_values() {
        assert_eq!(medium(1.0, 1.0, 1.0, 1.0).lambda(), 0.0);
        let l = medium(1.0, 4.0, 1.0, 1.0).lambda();
        assert!((l - 1.0 / 3.0).abs() < 1e-15, "lambda {l}");
        let l = medium(1.0, 1.0, 1.0, 2.0).lambda();
        assert!((l - 1.0 / 3.0).abs() < 1e-15, "lambda {l}");
        let l = medium(2.0, 0.5, 1.0, 1.0).lambda();
        assert!((l + 1.0 / 3.0).abs() < 1e-15, "lambda {l}");
    }

    #[test]
    fn rescaling_uses_the_side_of_the_argument() {
        let m = medium(1.0, 4.0, 1.0, 1.0);
        assert_eq!(m.h(-2.0), -2.0);
        assert_eq!(m.h(2.0), 1.0);
        assert_eq!(m.h(0.0), 0.0);
    }

    #[test]
    fn homogeneous_kernel_is_the_heat_kernel() {
        let m = medium(1.0, 1.0, 1.0, 1.0);
        let g = green(&m, 1.0, 0.0, 0.0).unwrap();
        assert!((g - 0.3989422804014327).abs() < 1e-15, "g {g}");
        // Off-diagonal: standard normal density at distance 1.
        let g = green(&m, 1.0, 0.3, 1.3).unwrap();
        let want = 0.3989422804014327 * (-0.5f64).exp();
        assert!((g - want).abs() < 1e-15, "g {g} want {want}");
    }

    #[test]
    fn kernel_mass_is_one_on_a_tau_x_lattice() {
        let media = [
            medium(1.0, 1.0, 1.0, 1.0),
            medium(1.0, 4.0, 1.0, 1.0),
            medium(1.0, 1.0, 1.0, 2.0),
            medium(2.0, 0.5, 1.0, 1.0),
            medium(0.5, 1.5, 1.0, 1.3),
        ];
        let mut worst = 0.0f64;
        for m in &media {
            for &tau in &[0.01, 0.1, 1.0, 5.0] {
                for &x in &[-3.0, -0.5, 0.0, 0.5, 3.0] {
                    let mass = green_mass(m, tau, x).unwrap();
                    worst = worst.max((mass - 1.0).abs());
                }
            }
        }
        println!("worst |mass - 1| = {worst:.3e}");
        assert!(worst < MASS_TOL, "worst mass defect {worst:.3e}");
    }

    #[test]
    fn interface_limits_have_the_density_ratio() {
        for m in [
            medium(1.0, 1.0, 1.0, 2.0),
            medium(1.0, 4.0, 1.0, 1.0),
            medium(0.5, 1.5, 1.0, 1.3),
        ] {
            for &(tau, x) in &[(0.3, -0.7), (1.0, 0.0), (0.5, 1.1)] {
                let gl = green_one_sided(&m, tau, x, InterfaceSide::Left).unwrap();
                let gr = green_one_sided(&m, tau, x, InterfaceSide::Right).unwrap();
                let want = m.rho2() / m.rho1();
                assert!(
                    (gr / gl - want).abs() < 1e-12,
                    "jump ratio {} want {want}",
                    gr / gl
                );
            }
        }
    }

    #[test]
    fn envelope_dominates_kernel_pointwise() {
        let m = medium(1.0, 4.0, 1.0, 1.0);
        let b = m.bounds();
        assert!((b.c_lambda - 2.0).abs() < 1e-15);
        assert!((b.c_diff - 0.25).abs() < 1e-15);
        assert!((b.c1 - 1.0).abs() < 1e-15);
        for &tau in &[0.05, 0.5, 2.0] {
            for i in -30..=30 {
                for j in -30..=30 {
                    let (x, z) = (i as f64 * 0.17, j as f64 * 0.23);
                    let g = green(&m, tau, x, z).unwrap();
                    let env = b.envelope(tau, x, z);
                    assert!(g <= env * (1.0 + 1e-12), "g {g} > envelope {env} at x={x} z={z} tau={tau}");
                    assert!(g >= 0.0);
                }
            }
        }
    }

    #[test]
    fn smoothing_a_gaussian_adds_variances() {
        // Unit-variance Gaussian smoothed for tau = 1 in a homogeneous
        // medium is the variance-2 Gaussian; check the peak value.
        let m = medium(1.0, 1.0, 1.0, 1.0);
        let grid = SpaceTimeGrid::new(-8.0, 8.0, 1601, 1.0, 10).unwrap();
        let f = GridFunction::from_fn(&grid, |x| {
            INV_SQRT_2PI * (-x * x / 2.0).exp()
        });
        let out = apply_green(&m, 1.0, &[0.0], &f).unwrap();
        let want = INV_SQRT_2PI / 2.0f64.sqrt(); // N(0,2) density at 0
        println!("smoothed peak {} want {want}", out[0]);
        assert!((out[0] - want).abs() < 1e-5);
    }

    #[test]
    fn short_times_degenerate_to_interpolation() {
        let m = medium(0.5, 1.5, 1.0, 1.3);
        let grid = SpaceTimeGrid::new(-2.0, 2.0, 41, 1.0, 10).unwrap();
        let f = GridFunction::from_fn(&grid, |x| x * x);
        // dt = 0.1, so tau below 0.01 is treated as zero elapsed time.
        let out = apply_green(&m, 0.005, &[0.35, -1.2], &f).unwrap();
        assert!((out[0] - f.interp_clamped(0.35)).abs() == 0.0);
        assert!((out[1] - f.interp_clamped(-1.2)).abs() == 0.0);
    }

    #[test]
    fn operator_matches_direct_smoothing_and_preserves_constants() {
        let m = medium(1.0, 4.0, 1.0, 1.0);
        let grid = SpaceTimeGrid::new(-6.0, 6.0, 241, 1.0, 100).unwrap();
        let f = GridFunction::from_fn(&grid, |x| (-x * x).exp() * (1.0 + 0.3 * x));
        let op = GreenOperator::new(&m, &grid, 0.25).unwrap();
        let via_op = op.apply(f.values());
        let direct = apply_green(&m, 0.25, &grid.nodes(), &f).unwrap();
        let mut worst = 0.0f64;
        for i in 0..grid.nx() {
            worst = worst.max((via_op[i] - direct[i]).abs());
        }
        assert!(worst < 1e-13, "operator vs direct {worst:.3e}");

        let ones = vec![1.0; grid.nx()];
        let smoothed = op.apply(&ones);
        let defect = smoothed
            .iter()
            .map(|v| (v - 1.0).abs())
            .fold(0.0f64, f64::max);
        assert!(defect < MASS_TOL, "constant preservation defect {defect:.3e}");
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(CompositeMedium::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(CompositeMedium::new(1.0, -2.0, 1.0, 1.0).is_err());
        assert!(CompositeMedium::new(1.0, 1.0, f64::NAN, 1.0).is_err());
        let m = medium(1.0, 1.0, 1.0, 1.0);
        assert!(green(&m, 0.0, 0.0, 0.0).is_err());
        assert!(green(&m, -1.0, 0.0, 0.0).is_err());
        assert!(green_mass(&m, f64::INFINITY, 0.0).is_err());
    }
}
