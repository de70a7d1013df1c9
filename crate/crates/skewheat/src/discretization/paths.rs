//! Reproducible Brownian increment bundles.
//!
//! Increments are generated by a counter-based construction: a 64-bit
//! mixing function applied to the tuple `(seed, path, step, draw)`. Every
//! increment is a pure function of its coordinates, so bundles are
//! bit-identical across runs, platforms, and thread counts, and a sub-range
//! of paths can be regenerated independently of the rest.

use crate::discretization::SpaceTimeGrid;
use crate::error::{Error, Result};

/// Finalizer of the splitmix64 generator; bijective on u64, passes
/// standard equidistribution batteries when chained as below.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of the counter tuple; chaining mixes each coordinate fully.
#[inline]
fn counter_hash(seed: u64, path: u64, step: u64, draw: u64) -> u64 {
    mix64(mix64(mix64(mix64(seed) ^ path) ^ step) ^ draw)
}

/// Uniform in (0, 1] from the counter tuple `(seed, i, j, draw)`. Used by
/// deterministic spot-check samplers elsewhere in the crate.
#[inline]
pub(crate) fn unit_uniform(seed: u64, i: u64, j: u64, draw: u64) -> f64 {
    ((counter_hash(seed, i, j, draw) >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
}

/// Standard normal from two counter draws via Box-Muller. `u1` is shifted
/// into (0, 1] so the logarithm is always finite.
#[inline]
fn normal_from_counter(seed: u64, path: u64, step: u64) -> f64 {
    let h0 = counter_hash(seed, path, step, 0);
    let h1 = counter_hash(seed, path, step, 1);
    let u1 = ((h0 >> 11) + 1) as f64 * (1.0 / 9007199254740992.0);
    let u2 = (h1 >> 11) as f64 * (1.0 / 9007199254740992.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// A bundle of Brownian increments on a grid's time axis: path `p`, step
/// `k` holds `B(t_{k+1}) - B(t_k) = sqrt(dt) * N(0,1)`.
#[derive(Debug, Clone)]
pub struct BrownianPaths {
    seed: u64,
    first_path: usize,
    n_paths: usize,
    nt: usize,
    dt: f64,
    /// Row-major `[local path][step]`.
    increments: Vec<f64>,
}

/// Sample paths `0..n_paths` of the bundle identified by `seed`.
pub fn sample_paths(seed: u64, grid: &SpaceTimeGrid, n_paths: usize) -> Result<BrownianPaths> {
    sample_path_range(seed, grid, 0, n_paths)
}

/// Sample the contiguous sub-bundle `first..end`. Path `p` of any range is
/// identical to path `p` of the full bundle, so large runs can stream
/// through batches without changing results.
pub fn sample_path_range(
    seed: u64,
    grid: &SpaceTimeGrid,
    first: usize,
    end: usize,
) -> Result<BrownianPaths> {
    if end <= first {
        return Err(Error::invalid(
            "n_paths",
            format!("empty path range {first}..{end}"),
        ));
    }
    let n = end - first;
    let nt = grid.nt();
    let sqrt_dt = grid.dt().sqrt();
    let mut increments = Vec::with_capacity(n * nt);
    for p in first..end {
        for k in 0..nt {
            increments.push(sqrt_dt * normal_from_counter(seed, p as u64, k as u64));
        }
    }
    Ok(BrownianPaths {
        seed,
        first_path: first,
        n_paths: n,
        nt,
        dt: grid.dt(),
        increments,
    })
}

impl BrownianPaths {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of paths held by this bundle.
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    /// Global index of the first path in this bundle.
    pub fn first_path(&self) -> usize {
        self.first_path
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Increment of local path `p` over step `k`.
    #[inline]
    pub fn increment(&self, p: usize, k: usize) -> f64 {
        self.increments[p * self.nt + k]
    }

    /// All increments of local path `p`.
    #[inline]
    pub fn path(&self, p: usize) -> &[f64] {
        &self.increments[p * self.nt..(p + 1) * self.nt]
    }

    /// Brownian value `B(t_k)` of local path `p` (prefix sum of increments).
    pub fn value_at(&self, p: usize, k: usize) -> f64 {
        self.path(p)[..k].iter().sum()
    }

    /// Brownian values `B(t_0) .. B(t_nt)` of local path `p`.
    pub fn values(&self, p: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.nt + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for &d in self.path(p) {
            acc += d;
            out.push(acc);
        }
        out
    }
}
