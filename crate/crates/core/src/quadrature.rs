//! Gauss-Legendre quadrature on subdivided intervals. Used for kernel
//! moments, where the integrand is smooth between explicit breakpoints.

/// 16-point Gauss-Legendre nodes and weights on [-1, 1].
/// Exact for polynomials up to degree 31.
pub const GL16_NODES: [f64; 16] = [
    -0.989_400_934_991_649_9,
    -0.944_575_023_073_232_6,
    -0.865_631_202_387_831_7,
    -0.755_404_408_355_003_0,
    -0.617_876_244_402_643_7,
    -0.458_016_777_657_227_4,
    -0.281_603_550_779_258_9,
    -0.095_012_509_837_637_44,
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_7,
    0.755_404_408_355_003_0,
    0.865_631_202_387_831_7,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];

pub const GL16_WEIGHTS: [f64; 16] = [
    0.027_152_459_411_754_1,
    0.062_253_523_938_647_89,
    0.095_158_511_682_492_79,
    0.124_628_971_255_533_87,
    0.149_595_988_816_576_73,
    0.169_156_519_395_002_54,
    0.182_603_415_044_923_59,
    0.189_450_610_455_068_5,
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_59,
    0.169_156_519_395_002_54,
    0.149_595_988_816_576_73,
    0.124_628_971_255_533_87,
    0.095_158_511_682_492_79,
    0.062_253_523_938_647_89,
    0.027_152_459_411_754_1,
];

/// ∫_[a,b] f via 16-point Gauss-Legendre.
pub fn gauss_legendre_16(a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for (x, w) in GL16_NODES.iter().zip(GL16_WEIGHTS.iter()) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Integrate over [pts[0], pts.last()] piecewise: each adjacent pair is split
/// into `refine` equal panels, each handled by GL16. `pts` must be sorted and
/// contain every point where `f` loses smoothness.
pub fn integrate_subdivided(pts: &[f64], refine: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    debug_assert!(pts.windows(2).all(|w| w[0] <= w[1]));
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let h = (b - a) / refine as f64;
        for i in 0..refine {
            acc += gauss_legendre_16(a + i as f64 * h, a + (i + 1) as f64 * h, &mut f);
        }
    }
    acc
}
