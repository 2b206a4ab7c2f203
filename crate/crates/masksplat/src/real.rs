//! Scalar abstraction so the same pipeline runs at `f32` (training) and
//! `f64` (verification).

/// Floating-point scalar usable throughout the pipeline.
///
/// Tolerance tiers differ per precision: gradient checks are specified at
/// `f64` (relative error < 1e-4) and loosen to < 5e-2 at `f32`.
pub trait Real: nalgebra::RealField + Copy + Send + Sync + Default {
    /// Lossy conversion from `f64`; the only way constants enter generic code.
    fn of(value: f64) -> Self;
    /// Widen to `f64` (exact for both supported scalars).
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(value: f64) -> Self {
        value as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(value: f64) -> Self {
        value
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
