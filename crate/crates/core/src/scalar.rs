use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar the numeric kernels are generic over: `f32` or `f64`.
///
/// Everything here needs `exp`/`ln`, so exact or rational types are not
/// admissible.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; constants and file data go through this.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Replaces every element with its exponential.
    fn exp_in_place(xs: &mut [Self]) {
        for x in xs {
            *x = x.exp();
        }
    }
}

impl Scalar for f32 {
    fn exp_in_place(xs: &mut [f32]) {
        exp_f32_slice(xs);
    }
}

impl Scalar for f64 {
    fn exp_in_place(xs: &mut [f64]) {
        exp_f64_slice(xs);
    }
}

/// Sum with eight independent accumulators so the loop vectorizes. The
/// rounding differs from a left-to-right sum.
pub(crate) fn lane_sum<T: Scalar>(xs: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = xs.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for k in 0..8 {
            acc[k] = acc[k] + c[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for &v in tail {
        s = s + v;
    }
    s
}

/// Largest element (`-inf` for an empty slice), eight lanes at a time. NaN
/// entries are skipped.
pub(crate) fn lane_max<T: Scalar>(xs: &[T]) -> T {
    let pick = |m: T, v: T| if v > m { v } else { m };
    let mut acc = [T::neg_infinity(); 8];
    let chunks = xs.chunks_exact(8);
    let tail = chunks.remainder();
    for c in chunks {
        for k in 0..8 {
            acc[k] = pick(acc[k], c[k]);
        }
    }
    acc.iter().chain(tail).fold(T::neg_infinity(), |m, &v| pick(m, v))
}

/// `a * b + c`, fused when the target has FMA (otherwise `mul_add` would be
/// a slow library call).
#[inline(always)]
fn madd<T: Float>(a: T, b: T, c: T) -> T {
    if cfg!(target_feature = "fma") {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

// The kernels below share one scheme: `x = n ln2 + r` with `|r| <= ln2 / 2`,
// `e^r` from a Taylor polynomial evaluated in Estrin form (short dependency
// chains), and `2^(n-1)` assembled in the exponent bits, doubled afterwards
// so the largest `n` stays representable. Adding 1.5 * 2^mantissa_bits rounds
// to an integer held in the low mantissa bits. Every branch is a select, so
// the loops vectorize. Results below the normal range flush to zero.

/// `exp` over a slice, within a few ulp of `f64::exp`.
#[inline(always)]
fn exp_f64_slice(xs: &mut [f64]) {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const ROUND: f64 = 6_755_399_441_055_744.0;
    const LO: f64 = -708.0;
    const HI: f64 = 709.782_712_893_384;
    const C: [f64; 13] = [
        1.0,
        1.0,
        1.0 / 2.0,
        1.0 / 6.0,
        1.0 / 24.0,
        1.0 / 120.0,
        1.0 / 720.0,
        1.0 / 5040.0,
        1.0 / 40320.0,
        1.0 / 362_880.0,
        1.0 / 3_628_800.0,
        1.0 / 39_916_800.0,
        1.0 / 479_001_600.0,
    ];
    for v in xs.iter_mut() {
        let x0 = *v;
        let x = x0.max(LO).min(HI);
        let t = madd(x, LOG2E, ROUND);
        let n = t - ROUND;
        let r = madd(-n, LN2_LO, madd(-n, LN2_HI, x));
        let r2 = r * r;
        let r4 = r2 * r2;
        let r8 = r4 * r4;
        let lo = madd(madd(C[3], r, C[2]), r2, madd(C[1], r, C[0]));
        let mid = madd(madd(C[7], r, C[6]), r2, madd(C[5], r, C[4]));
        let hi = madd(C[12], r4, madd(madd(C[11], r, C[10]), r2, madd(C[9], r, C[8])));
        let p = madd(hi, r8, madd(mid, r4, lo));
        let half_scale = f64::from_bits(t.to_bits().wrapping_add(1022) << 52);
        let y = p * half_scale * 2.0;
        let y = if x0 < LO { 0.0 } else { y };
        let y = if x0 > HI { f64::INFINITY } else { y };
        *v = if x0.is_nan() { f64::NAN } else { y };
    }
}

/// `exp` over a slice, within a few ulp of `f32::exp`.
#[inline(always)]
fn exp_f32_slice(xs: &mut [f32]) {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    const ROUND: f32 = 12_582_912.0;
    const LO: f32 = -86.0;
    const HI: f32 = 88.722_83;
    const C: [f32; 8] = [
        1.0,
        1.0,
        1.0 / 2.0,
        1.0 / 6.0,
        1.0 / 24.0,
        1.0 / 120.0,
        1.0 / 720.0,
        1.0 / 5040.0,
    ];
    for v in xs.iter_mut() {
        let x0 = *v;
        let x = x0.max(LO).min(HI);
        let t = madd(x, LOG2E, ROUND);
        let n = t - ROUND;
        let r = madd(-n, LN2_LO, madd(-n, LN2_HI, x));
        let r2 = r * r;
        let r4 = r2 * r2;
        let lo = madd(madd(C[3], r, C[2]), r2, madd(C[1], r, C[0]));
        let hi = madd(madd(C[7], r, C[6]), r2, madd(C[5], r, C[4]));
        let p = madd(hi, r4, lo);
        let half_scale = f32::from_bits(t.to_bits().wrapping_add(126) << 23);
        let y = p * half_scale * 2.0;
        let y = if x0 < LO { 0.0 } else { y };
        let y = if x0 > HI { f32::INFINITY } else { y };
        *v = if x0.is_nan() { f32::NAN } else { y };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_kernel_matches_libm() {
        let mut xs: Vec<f64> = (-7080..=7090).map(|k| k as f64 * 0.1 + 0.0123).collect();
        xs.extend([0.0, -0.0, 1e-300, -1e-300, 0.5 * std::f64::consts::LN_2]);
        let want: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        let mut got = xs.clone();
        f64::exp_in_place(&mut got);
        for (w, a) in want.iter().zip(&got) {
            assert!((w - a).abs() <= 4.0 * f64::EPSILON * w, "{w} {a}");
        }
    }

    #[test]
    fn exp_kernel_edge_values() {
        let mut xs = vec![f64::NEG_INFINITY, -1e9, -709.0, 709.7, 710.0, f64::INFINITY];
        f64::exp_in_place(&mut xs);
        assert_eq!(&xs[..3], &[0.0, 0.0, 0.0]);
        assert!((xs[3] / 709.7f64.exp() - 1.0).abs() < 4.0 * f64::EPSILON);
        assert_eq!(&xs[4..], &[f64::INFINITY, f64::INFINITY]);
        let mut nan = [f64::NAN];
        f64::exp_in_place(&mut nan);
        assert!(nan[0].is_nan());
        let mut f = vec![f32::NEG_INFINITY, -1e9, -87.0, 88.7, 89.0, f32::NAN];
        f32::exp_in_place(&mut f);
        assert_eq!(&f[..3], &[0.0, 0.0, 0.0]);
        assert!((f[3] / 88.7f32.exp() - 1.0).abs() < 4.0 * f32::EPSILON);
        assert_eq!(f[4], f32::INFINITY);
        assert!(f[5].is_nan());
    }

    #[test]
    fn f32_kernel_matches_libm() {
        let xs: Vec<f32> = (-8590..=8870).map(|k| k as f32 * 0.01 + 0.0037).collect();
        let mut got = xs.clone();
        f32::exp_in_place(&mut got);
        for (x, a) in xs.iter().zip(&got) {
            let w = (*x as f64).exp();
            assert!(((w - *a as f64) / w).abs() <= 4.0 * f32::EPSILON as f64, "{x}: {w} {a}");
        }
    }

    #[test]
    fn lane_max_examples() {
        assert_eq!(lane_max::<f64>(&[]), f64::NEG_INFINITY);
        assert_eq!(lane_max(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        for n in [1, 7, 8, 9, 33, 500] {
            let xs: Vec<f64> = (0..n).map(|k| (k as f64 * 0.91).sin()).collect();
            let want = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(lane_max(&xs), want);
        }
        assert_eq!(lane_max(&[1.0, f64::NAN, 2.0]), 2.0);
    }

    #[test]
    fn lane_sum_matches_plain_sum() {
        for n in [0, 1, 7, 8, 9, 33, 500] {
            let xs: Vec<f64> = (0..n).map(|k| (k as f64 * 0.37).sin()).collect();
            let plain: f64 = xs.iter().sum();
            assert!((lane_sum(&xs) - plain).abs() < 1e-12);
        }
    }
}
