//! Small deterministic statistics helpers shared by the solvers.
//!
//! Every reduction here runs in a fixed order (plain sequential folds), so
//! results are bit-identical across runs and independent of thread count.

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    debug_assert!(!xs.is_empty());
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample mean and unbiased (n-1) variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    debug_assert!(n >= 2);
    let m = mean(xs);
    let ss = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    (m, ss / (n - 1) as f64)
}
