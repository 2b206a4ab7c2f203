//! Real spherical-harmonics color basis, degrees 0..=3.
//!
//! Colors follow the splatting convention `c = max(0, 0.5 + sum_k b_k(dir) * sh_k)`
//! where `b_k` folds the basis polynomial and its sign convention into one
//! factor, so evaluation and gradients are plain dot products.

use nalgebra::Vector3;

use crate::real::Real;

pub const MAX_COEFFS: usize = 16;

const C0: f64 = 0.28209479177387814;
const C1: f64 = 0.4886025119029199;
const C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
const C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

/// Coefficients per channel for a given degree: `(degree + 1)^2`.
pub fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Normalize a view direction, falling back to +z when degenerate.
pub fn safe_normalize<T: Real>(dir: Vector3<T>) -> Vector3<T> {
    let n = dir.norm();
    if n.to_f64() < 1e-12 {
        Vector3::new(T::zero(), T::zero(), T::one())
    } else {
        dir / n
    }
}

/// Basis factors `b_k(dir)` for a unit direction. Entries past the degree are zero.
pub fn basis<T: Real>(dir: &Vector3<T>, degree: usize) -> [T; MAX_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [T::zero(); MAX_COEFFS];
    b[0] = T::of(C0);
    if degree >= 1 {
        b[1] = -T::of(C1) * y;
        b[2] = T::of(C1) * z;
        b[3] = -T::of(C1) * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = T::of(C2[0]) * x * y;
        b[5] = T::of(C2[1]) * y * z;
        b[6] = T::of(C2[2]) * (T::of(2.0) * zz - xx - yy);
        b[7] = T::of(C2[3]) * x * z;
        b[8] = T::of(C2[4]) * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[9] = T::of(C3[0]) * y * (T::of(3.0) * xx - yy);
        b[10] = T::of(C3[1]) * x * y * z;
        b[11] = T::of(C3[2]) * y * (T::of(4.0) * zz - xx - yy);
        b[12] = T::of(C3[3]) * z * (T::of(2.0) * zz - T::of(3.0) * (xx + yy));
        b[13] = T::of(C3[4]) * x * (T::of(4.0) * zz - xx - yy);
        b[14] = T::of(C3[5]) * z * (xx - yy);
        b[15] = T::of(C3[6]) * x * (xx - yy);
    }
    b
}

/// Partial derivatives `d b_k / d dir` for a unit direction.
pub fn basis_grad<T: Real>(dir: &Vector3<T>, degree: usize) -> [Vector3<T>; MAX_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let two = T::of(2.0);
    let mut g = [Vector3::zeros(); MAX_COEFFS];
    if degree >= 1 {
        g[1] = Vector3::new(T::zero(), -T::of(C1), T::zero());
        g[2] = Vector3::new(T::zero(), T::zero(), T::of(C1));
        g[3] = Vector3::new(-T::of(C1), T::zero(), T::zero());
    }
    if degree >= 2 {
        g[4] = Vector3::new(y, x, T::zero()) * T::of(C2[0]);
        g[5] = Vector3::new(T::zero(), z, y) * T::of(C2[1]);
        g[6] = Vector3::new(-two * x, -two * y, T::of(4.0) * z) * T::of(C2[2]);
        g[7] = Vector3::new(z, T::zero(), x) * T::of(C2[3]);
        g[8] = Vector3::new(two * x, -two * y, T::zero()) * T::of(C2[4]);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let three = T::of(3.0);
        let four = T::of(4.0);
        let six = T::of(6.0);
        let eight = T::of(8.0);
        g[9] = Vector3::new(six * x * y, three * (xx - yy), T::zero()) * T::of(C3[0]);
        g[10] = Vector3::new(y * z, x * z, x * y) * T::of(C3[1]);
        g[11] = Vector3::new(
            -two * x * y,
            four * zz - xx - three * yy,
            eight * y * z,
        ) * T::of(C3[2]);
        g[12] = Vector3::new(
            -six * x * z,
            -six * y * z,
            six * zz - three * (xx + yy),
        ) * T::of(C3[3]);
        g[13] = Vector3::new(
            four * zz - three * xx - yy,
            -two * x * y,
            eight * x * z,
        ) * T::of(C3[4]);
        g[14] = Vector3::new(two * x * z, -two * y * z, xx - yy) * T::of(C3[5]);
        g[15] = Vector3::new(three * xx - yy, -two * x * y, T::zero()) * T::of(C3[6]);
    }
    g
}

/// Unclamped color: `0.5 + sum_k b_k * sh_k` per channel.
///
/// `coeffs` is laid out coefficient-major, `[k][rgb]`.
pub fn eval_raw<T: Real>(coeffs: &[T], dir: &Vector3<T>, degree: usize) -> Vector3<T> {
    debug_assert_eq!(coeffs.len(), 3 * coeff_count(degree));
    let dir = safe_normalize(*dir);
    let b = basis(&dir, degree);
    let mut rgb = Vector3::repeat(T::of(0.5));
    for (k, bk) in b.iter().enumerate().take(coeff_count(degree)) {
        rgb.x += *bk * coeffs[3 * k];
        rgb.y += *bk * coeffs[3 * k + 1];
        rgb.z += *bk * coeffs[3 * k + 2];
    }
    rgb
}

/// View-dependent color, clamped to be non-negative.
pub fn eval<T: Real>(coeffs: &[T], dir: &Vector3<T>, degree: usize) -> Vector3<T> {
    eval_raw(coeffs, dir, degree).map(|v| v.max(T::zero()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_zero_is_view_independent() {
        let coeffs = [0.7, -0.2, 0.1];
        let a = eval::<f64>(&coeffs, &Vector3::new(0.0, 0.0, 1.0), 0);
        let b = eval::<f64>(&coeffs, &Vector3::new(1.0, 0.0, 0.0).normalize(), 0);
        assert_eq!(a, b);
        assert!((a.x - (0.5 + 0.7 * C0)).abs() < 1e-15);
    }

    #[test]
    fn zero_coefficients_give_mid_gray() {
        let coeffs = [0.0; 3 * 16];
        let c = eval::<f64>(&coeffs, &Vector3::new(0.3, -0.5, 0.8).normalize(), 3);
        assert_eq!(c, Vector3::new(0.5, 0.5, 0.5));
    }

    #[test]
    fn degree_one_mirrors_around_offset() {
        // Only degree-1 terms set: they are odd in the direction, so
        // antipodal views mirror around the 0.5 offset.
        let mut coeffs = [0.0; 3 * 4];
        coeffs[3] = 0.2; // k=1, red
        coeffs[7] = -0.1; // k=2, green
        coeffs[11] = 0.05; // k=3, blue
        let dir = Vector3::new(0.4, 0.2, -0.6).normalize();
        let a = eval_raw::<f64>(&coeffs, &dir, 1);
        let b = eval_raw::<f64>(&coeffs, &(-dir), 1);
        for c in 0..3 {
            assert!((a[c] - 0.5 + (b[c] - 0.5)).abs() < 1e-14);
        }
        // Independent check against the raw polynomials.
        let expect_red = 0.5 + (-C1 * dir.y) * 0.2;
        assert!((a.x - expect_red).abs() < 1e-14);
    }

    #[test]
    fn basis_grad_matches_finite_differences() {
        let dir = Vector3::new(0.36, -0.48, 0.8);
        assert!((dir.norm() - 1.0_f64).abs() < 1e-12);
        let g = basis_grad(&dir, 3);
        let h = 1e-6;
        for k in 0..16 {
            for axis in 0..3 {
                let mut dp = dir;
                let mut dm = dir;
                dp[axis] += h;
                dm[axis] -= h;
                // Probe the raw polynomial (no renormalization here).
                let num = (basis(&dp, 3)[k] - basis(&dm, 3)[k]) / (2.0 * h);
                assert!(
                    (num - g[k][axis]).abs() < 1e-6,
                    "k={k} axis={axis} num={num} ana={}",
                    g[k][axis]
                );
            }
        }
    }

    #[test]
    fn clamp_applies_per_channel() {
        let mut coeffs = [0.0; 3];
        coeffs[0] = -10.0;
        coeffs[1] = 0.1;
        let c = eval::<f64>(&coeffs, &Vector3::new(0.0, 0.0, 1.0), 0);
        assert_eq!(c.x, 0.0);
        assert!(c.y > 0.5);
    }
}
