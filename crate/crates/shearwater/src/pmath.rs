//! Portable elementary functions with a fixed operation sequence.
//!
//! The in-process runtime and the emitted C must agree bitwise, so neither
//! may call its platform libm for sin/cos/exp/tanh (those differ by a few
//! ulp across implementations). These routines use only IEEE-exact building
//! blocks — arithmetic, `round`, `sqrt`, bit manipulation — in an order the
//! C emitter reproduces token for token; with contraction disabled on the C
//! side (`-ffp-contract=off`) both sides perform the identical rounding
//! sequence. Accuracy is within a few ulp of correctly rounded over the
//! solver's argument ranges, which is ample for initial conditions and
//! source terms (the only places elementary functions appear).
//!
//! Argument reduction constants are the classic 33-bit-split values used by
//! fdlibm-derived libraries; the two-term split is exact here because
//! reduced multiples stay far below 2^20.

const INV_PIO2: f64 = 6.36619772367581382433e-01;
const PIO2_HI: f64 = 1.57079632673412561417e+00;
const PIO2_LO: f64 = 6.07710050650619224932e-11;

const S1: f64 = -1.66666666666666324348e-01;
const S2: f64 = 8.33333333332248946124e-03;
const S3: f64 = -1.98412698298579493134e-04;
const S4: f64 = 2.75573137070700676789e-06;
const S5: f64 = -2.50507602534068634195e-08;
const S6: f64 = 1.58969099521155010221e-10;

const C1: f64 = 4.16666666666666019037e-02;
const C2: f64 = -1.38888888888741095749e-03;
const C3: f64 = 2.48015872894767294178e-05;
const C4: f64 = -2.75573143513906633035e-07;
const C5: f64 = 2.08757232129817482790e-09;
const C6: f64 = -1.13596475577881948265e-11;

const INV_LN2: f64 = 1.44269504088896338700e+00;
const LN2_HI: f64 = 6.93147180369123816490e-01;
const LN2_LO: f64 = 1.90821492927058770002e-10;

/// Reduce x to (r, q) with x = q*(pi/2) + r, |r| <= pi/4 + eps, q mod 4.
#[inline]
fn reduce_pio2(x: f64) -> (f64, i64) {
    let nf = (x * INV_PIO2).round();
    let r = (x - nf * PIO2_HI) - nf * PIO2_LO;
    let q = ((nf as i64) % 4 + 4) % 4;
    (r, q)
}

/// sin on the reduced interval |r| <= pi/4.
#[inline]
fn sin_kernel(r: f64) -> f64 {
    let z = r * r;
    r + r * z * (S1 + z * (S2 + z * (S3 + z * (S4 + z * (S5 + z * S6)))))
}

/// cos on the reduced interval |r| <= pi/4.
#[inline]
fn cos_kernel(r: f64) -> f64 {
    let z = r * r;
    1.0 - 0.5 * z + z * z * (C1 + z * (C2 + z * (C3 + z * (C4 + z * (C5 + z * C6)))))
}

pub fn p_sin(x: f64) -> f64 {
    let (r, q) = reduce_pio2(x);
    match q {
        0 => sin_kernel(r),
        1 => cos_kernel(r),
        2 => -sin_kernel(r),
        _ => -cos_kernel(r),
    }
}

pub fn p_cos(x: f64) -> f64 {
    let (r, q) = reduce_pio2(x);
    match q {
        0 => cos_kernel(r),
        1 => -sin_kernel(r),
        2 => -cos_kernel(r),
        _ => sin_kernel(r),
    }
}

/// exp(r) - 1 on the reduced interval |r| <= ln(2)/2: Taylor polynomial
/// with nested reciprocal-factorial coefficients, truncation below one ulp.
#[inline]
fn exp_poly_tail(r: f64) -> f64 {
    r * (1.0
        + r * (0.5
            + r * (0.16666666666666666
                + r * (0.041666666666666664
                    + r * (0.008333333333333333
                        + r * (0.001388888888888889
                            + r * (1.984126984126984e-4
                                + r * (2.48015873015873e-5
                                    + r * (2.7557319223985893e-6
                                        + r * (2.755731922398589e-7
                                            + r * (2.505210838544172e-8
                                                + r * 2.08767569878681e-9)))))))))))
}

pub fn p_exp(x: f64) -> f64 {
    if x > 709.0 {
        return f64::INFINITY;
    }
    if x < -745.0 {
        return 0.0;
    }
    let nf = (x * INV_LN2).round();
    let r = (x - nf * LN2_HI) - nf * LN2_LO;
    let p = 1.0 + exp_poly_tail(r);
    let n = nf as i64;
    let scale = f64::from_bits(((n + 1023) as u64) << 52);
    p * scale
}

/// exp(x) - 1 for x in [0, 64]. Keeping the subtraction implicit preserves
/// precision for small x, where exp(x) is close to 1.
#[inline]
fn expm1_nonneg(x: f64) -> f64 {
    if x < 0.34657359027997264 {
        // Below ln(2)/2 no reduction is needed and the tail is exact here.
        return exp_poly_tail(x);
    }
    let nf = (x * INV_LN2).round();
    let r = (x - nf * LN2_HI) - nf * LN2_LO;
    let n = nf as i64;
    let scale = f64::from_bits(((n + 1023) as u64) << 52);
    // 2^n * (1 + tail) - 1, regrouped so no term cancels: n >= 1 here.
    scale * exp_poly_tail(r) + (scale - 1.0)
}

pub fn p_tanh(x: f64) -> f64 {
    let ax = if x < 0.0 { -x } else { x };
    if ax > 20.0 {
        return if x < 0.0 { -1.0 } else { 1.0 };
    }
    let t = expm1_nonneg(2.0 * ax);
    let v = t / (t + 2.0);
    if x < 0.0 {
        -v
    } else {
        v
    }
}

/// Hardware square root: correctly rounded per IEEE 754 on every target, so
/// it is safe to use directly on both sides.
pub fn p_sqrt(x: f64) -> f64 {
    x.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ulp_distance(a: f64, b: f64) -> u64 {
        if a == b {
            return 0;
        }
        let (ia, ib) = (a.to_bits() as i64, b.to_bits() as i64);
        // Map to a monotonic integer line (sign-magnitude to offset form).
        let ma = if ia < 0 { i64::MIN - ia } else { ia };
        let mb = if ib < 0 { i64::MIN - ib } else { ib };
        ma.abs_diff(mb)
    }

    #[test]
    fn sin_cos_track_the_system_library_closely() {
        let mut worst = 0;
        for i in -7000..=7000 {
            let x = i as f64 * 1.0e-3;
            worst = worst.max(ulp_distance(p_sin(x), x.sin()));
            worst = worst.max(ulp_distance(p_cos(x), x.cos()));
        }
        assert!(worst <= 4, "worst sin/cos ulp distance {worst}");
    }

    #[test]
    fn exp_tracks_the_system_library_closely() {
        let mut worst = 0;
        for i in -3000..=1000 {
            let x = i as f64 * 1.0e-2;
            worst = worst.max(ulp_distance(p_exp(x), x.exp()));
        }
        assert!(worst <= 4, "worst exp ulp distance {worst}");
        assert_eq!(p_exp(0.0), 1.0);
        assert_eq!(p_exp(800.0), f64::INFINITY);
        assert_eq!(p_exp(-800.0), 0.0);
    }

    #[test]
    fn tanh_tracks_the_system_library_closely() {
        let mut worst = 0;
        for i in -2500..=2500 {
            let x = i as f64 * 1.0e-2;
            worst = worst.max(ulp_distance(p_tanh(x), x.tanh()));
        }
        assert!(worst <= 8, "worst tanh ulp distance {worst}");
        assert_eq!(p_tanh(25.0), 1.0);
        assert_eq!(p_tanh(-25.0), -1.0);
        assert_eq!(p_tanh(0.0), 0.0);
    }

    #[test]
    fn quadrant_boundaries_are_stable() {
        // Near its zeros sin/cos output is dominated by the argument
        // reduction residual, which the two-term split bounds in absolute
        // terms (~1e-26 per quadrant step), not relative ones. Accept a
        // tiny absolute discrepancy there; elsewhere hold the ulp line.
        let close = |a: f64, b: f64| ulp_distance(a, b) <= 4 || (a - b).abs() <= 1.0e-24;
        for k in 1..8 {
            let x = k as f64 * std::f64::consts::FRAC_PI_2;
            for dx in [-1e-9, 0.0, 1e-9] {
                let v = x + dx;
                assert!(close(p_sin(v), v.sin()), "sin near {v}");
                assert!(close(p_cos(v), v.cos()), "cos near {v}");
            }
        }
    }
}
