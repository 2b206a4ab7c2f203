use nalgebra::{Vector2, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::sh;

/// Array-of-records storage for a set of 3D Gaussians.
///
/// Parameters are stored unconstrained (logits and logs) so optimizers can
/// step freely; activations are applied at read time:
/// opacity = sigmoid(opacity_logit), scale = exp(log_scale).
/// Quaternions are stored with nonzero norm and normalized before use.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud<T: Real> {
    pub centers: Vec<Vector3<T>>,
    pub opacity_logits: Vec<T>,
    pub log_scales: Vec<Vector3<T>>,
    /// Quaternions in (w, x, y, z) order.
    pub rotations: Vec<Vector4<T>>,
    /// Spherical-harmonics coefficients, `3 * (degree + 1)^2` per Gaussian,
    /// laid out coefficient-major: `[coeff 0 rgb, coeff 1 rgb, ...]`.
    pub sh: Vec<T>,
    pub sh_degree: usize,
    /// Two learnable existence scores per Gaussian: (present, absent).
    pub mask_logits: Vec<Vector2<T>>,
}

impl<T: Real> GaussianCloud<T> {
    pub fn with_capacity(n: usize, sh_degree: usize) -> Self {
        GaussianCloud {
            centers: Vec::with_capacity(n),
            opacity_logits: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            sh: Vec::with_capacity(n * 3 * sh::coeff_count(sh_degree)),
            sh_degree,
            mask_logits: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Number of SH coefficients per Gaussian per channel.
    pub fn sh_coeffs_per_channel(&self) -> usize {
        sh::coeff_count(self.sh_degree)
    }

    /// Stride of the flattened SH array per Gaussian.
    pub fn sh_stride(&self) -> usize {
        3 * self.sh_coeffs_per_channel()
    }

    pub fn sh_slice(&self, i: usize) -> &[T] {
        let s = self.sh_stride();
        &self.sh[i * s..(i + 1) * s]
    }

    pub fn sh_slice_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.sh_stride();
        &mut self.sh[i * s..(i + 1) * s]
    }

    #[inline]
    pub fn opacity(&self, i: usize) -> T {
        sigmoid(self.opacity_logits[i])
    }

    #[inline]
    pub fn scales(&self, i: usize) -> Vector3<T> {
        self.log_scales[i].map(|v| v.exp())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let stride = self.sh_stride();
        if self.opacity_logits.len() != n
            || self.log_scales.len() != n
            || self.rotations.len() != n
            || self.mask_logits.len() != n
            || self.sh.len() != n * stride
        {
            return Err(Error::LengthMismatch(format!(
                "cloud arrays disagree on N: centers={} opacities={} scales={} \
                 rotations={} masks={} sh={} (stride {})",
                n,
                self.opacity_logits.len(),
                self.log_scales.len(),
                self.rotations.len(),
                self.mask_logits.len(),
                self.sh.len(),
                stride
            )));
        }
        if self.sh_degree > 3 {
            return Err(Error::InvalidParameter(format!(
                "sh degree {} out of range 0..=3",
                self.sh_degree
            )));
        }
        for (i, q) in self.rotations.iter().enumerate() {
            if q.norm() == T::zero() {
                return Err(Error::InvalidParameter(format!(
                    "gaussian {i}: zero quaternion"
                )));
            }
        }
        Ok(())
    }

    /// Keep only the Gaussians listed in `keep` (ascending indices).
    pub fn retain_indices(&mut self, keep: &[usize]) {
        let stride = self.sh_stride();
        let take = |src: &mut Vec<Vector3<T>>| {
            *src = keep.iter().map(|&i| src[i]).collect();
        };
        take(&mut self.centers);
        take(&mut self.log_scales);
        self.opacity_logits = keep.iter().map(|&i| self.opacity_logits[i]).collect();
        self.rotations = keep.iter().map(|&i| self.rotations[i]).collect();
        self.mask_logits = keep.iter().map(|&i| self.mask_logits[i]).collect();
        let mut sh = Vec::with_capacity(keep.len() * stride);
        for &i in keep {
            sh.extend_from_slice(&self.sh[i * stride..(i + 1) * stride]);
        }
        self.sh = sh;
    }

    pub fn cast<U: Real>(&self) -> GaussianCloud<U> {
        GaussianCloud {
            centers: self.centers.iter().map(|v| v.map(|x| U::of(x.to_f64()))).collect(),
            opacity_logits: self.opacity_logits.iter().map(|x| U::of(x.to_f64())).collect(),
            log_scales: self.log_scales.iter().map(|v| v.map(|x| U::of(x.to_f64()))).collect(),
            rotations: self.rotations.iter().map(|v| v.map(|x| U::of(x.to_f64()))).collect(),
            sh: self.sh.iter().map(|x| U::of(x.to_f64())).collect(),
            sh_degree: self.sh_degree,
            mask_logits: self.mask_logits.iter().map(|v| v.map(|x| U::of(x.to_f64()))).collect(),
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverse of [`sigmoid`]; input must lie strictly in (0, 1).
#[inline]
pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cloud(n: usize) -> GaussianCloud<f64> {
        let mut c = GaussianCloud::with_capacity(n, 0);
        for i in 0..n {
            c.centers.push(Vector3::new(i as f64, 0.0, 0.0));
            c.opacity_logits.push(0.0);
            c.log_scales.push(Vector3::zeros());
            c.rotations.push(Vector4::new(1.0, 0.0, 0.0, 0.0));
            c.sh.extend_from_slice(&[0.1, 0.2, 0.3]);
            c.mask_logits.push(Vector2::new(3.0, 0.0));
        }
        c
    }

    #[test]
    fn validate_catches_mismatch_and_zero_quaternion() {
        let mut c = unit_cloud(3);
        c.validate().unwrap();
        c.opacity_logits.pop();
        assert!(c.validate().is_err());

        let mut c = unit_cloud(2);
        c.rotations[1] = Vector4::zeros();
        assert!(c.validate().is_err());
    }

    #[test]
    fn activations() {
        let c = unit_cloud(1);
        assert!((c.opacity(0) - 0.5).abs() < 1e-15);
        assert_eq!(c.scales(0), Vector3::new(1.0, 1.0, 1.0));
        assert!((logit(sigmoid(1.7_f64)) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn retain_compacts_all_arrays() {
        let mut c = unit_cloud(4);
        c.centers[2].x = 42.0;
        c.retain_indices(&[0, 2]);
        assert_eq!(c.len(), 2);
        assert_eq!(c.centers[1].x, 42.0);
        assert_eq!(c.sh.len(), 2 * 3);
        c.validate().unwrap();
    }
}
