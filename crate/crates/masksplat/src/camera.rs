use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::real::Real;

/// Pinhole camera with a rigid world-to-camera transform.
///
/// Pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`; a point on the
/// optical axis projects to `(cx, cy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera<T: Real> {
    pub width: u32,
    pub height: u32,
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    /// Rotation block of the world-to-camera transform.
    pub rotation: Matrix3<T>,
    /// Translation block: `x_cam = R * x_world + t`.
    pub translation: Vector3<T>,
    pub near_clip: T,
}

impl<T: Real> Camera<T> {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter(
                "camera dimensions must be at least 1x1".into(),
            ));
        }
        if self.fx <= T::zero() || self.fy <= T::zero() {
            return Err(Error::InvalidParameter(
                "focal lengths must be positive".into(),
            ));
        }
        let gram = self.rotation * self.rotation.transpose();
        let err = (gram - Matrix3::identity()).abs().max();
        if err.to_f64() > 1e-6 {
            return Err(Error::InvalidParameter(format!(
                "rotation block is not orthonormal (max deviation {:.3e})",
                err.to_f64()
            )));
        }
        Ok(())
    }

    /// Transform a world-space point into camera space.
    #[inline]
    pub fn to_camera(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<T> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Camera at `eye` looking toward `target` with `up` roughly vertical.
    pub fn look_at(
        width: u32,
        height: u32,
        focal: T,
        eye: Vector3<T>,
        target: Vector3<T>,
        up: Vector3<T>,
    ) -> Self {
        // Camera convention: +z forward, +x right, +y down.
        let forward = (target - eye).normalize();
        let right = forward.cross(&-up).normalize();
        let down = forward.cross(&right).normalize();
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        let translation = -(rotation * eye);
        Camera {
            width,
            height,
            fx: focal,
            fy: focal,
            cx: T::of(width as f64 / 2.0),
            cy: T::of(height as f64 / 2.0),
            rotation,
            translation,
            near_clip: T::of(0.01),
        }
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        Camera {
            width: self.width,
            height: self.height,
            fx: U::of(self.fx.to_f64()),
            fy: U::of(self.fy.to_f64()),
            cx: U::of(self.cx.to_f64()),
            cy: U::of(self.cy.to_f64()),
            rotation: self.rotation.map(|v| U::of(v.to_f64())),
            translation: self.translation.map(|v| U::of(v.to_f64())),
            near_clip: U::of(self.near_clip.to_f64()),
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }
}
