//! Composite Gauss–Legendre quadrature.
//!
//! A fixed 16-point rule applied over equal subpanels. All integrands in
//! this crate are Gaussians (analytic, rapidly decaying), for which the
//! composite rule converges faster than any power of the panel width; with
//! panels no wider than ~0.45 standard deviations the result is accurate to
//! a few ulps, far below every tolerance used by callers.

/// Abscissae of the 16-point Gauss–Legendre rule on [-1, 1] (positive half;
/// the rule is symmetric).
const GL_X: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_7,
    0.755_404_408_355_003_0,
    0.865_631_202_387_831_7,
    0.944_575_023_073_232_6,
    0.989_400_934_991_650_0,
];

/// Weights paired with `GL_X`.
const GL_W: [f64; 8] = [
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_6,
    0.169_156_519_395_002_5,
    0.149_595_988_816_576_7,
    0.124_628_971_255_533_9,
    0.095_158_511_682_492_78,
    0.062_253_523_938_647_89,
    0.027_152_459_411_754_09,
];

/// Visit the nodes and weights of the composite rule over `[lo, hi]` split
/// into `panels` equal subintervals. Calls `sink(node, weight)` for every
/// quadrature node; weights sum to `hi - lo`.
pub fn foreach_node(lo: f64, hi: f64, panels: usize, mut sink: impl FnMut(f64, f64)) {
    debug_assert!(panels >= 1 && hi > lo);
    let width = (hi - lo) / panels as f64;
    let half = 0.5 * width;
    for p in 0..panels {
        let mid = lo + (p as f64 + 0.5) * width;
        for i in 0..8 {
            let dx = half * GL_X[i];
            let w = half * GL_W[i];
            sink(mid - dx, w);
            sink(mid + dx, w);
        }
    }
}
