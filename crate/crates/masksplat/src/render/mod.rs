//! Tile-binned forward rendering and the analytic backward pass.

mod backward;
mod binning;
mod forward;

pub use backward::{
    backward, backward_alpha_chain, backward_pixel, AlphaChainGrad, ContributorGrad,
    GradientSet, PixelBackward, PixelContrib,
};
pub use binning::{bin_and_sort, TileBinning};
pub use forward::{render_cloud, render_masked, render_standard, RenderedView};

use nalgebra::Vector3;

use crate::real::Real;

/// One splat consumed by a pixel, as retained for the backward pass.
///
/// `alpha` is the blended density (in opacity-multiply mode it already
/// includes the mask) and `transmittance` the value at consumption time.
/// Masked splats are recorded too: they must receive mask gradients even
/// though they change neither color nor transmittance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRecord<T: Real> {
    pub splat: u32,
    pub alpha: T,
    pub transmittance: T,
}

/// Rendered image plus the per-pixel state the backward pass needs.
#[derive(Debug, Clone)]
pub struct FrameBuffer<T: Real> {
    pub width: u32,
    pub height: u32,
    pub color: Vec<Vector3<T>>,
    /// Transmittance remaining after the last consumed splat.
    pub final_transmittance: Vec<T>,
    /// Number of splats that passed the alpha cutoff at each pixel.
    pub n_contrib: Vec<u32>,
    /// Front-to-back contributor records, present in gradient mode.
    pub records: Option<Vec<Vec<PixelRecord<T>>>>,
    /// Contributions dropped because a pixel hit the record cap.
    pub overflow_count: usize,
}

impl<T: Real> FrameBuffer<T> {
    pub fn new(width: u32, height: u32, record: bool) -> Self {
        let n = width as usize * height as usize;
        FrameBuffer {
            width,
            height,
            color: vec![Vector3::zeros(); n],
            final_transmittance: vec![T::one(); n],
            n_contrib: vec![0; n],
            records: record.then(|| vec![Vec::new(); n]),
            overflow_count: 0,
        }
    }

    #[inline]
    pub fn pixel_index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn n_pixels(&self) -> usize {
        self.color.len()
    }

    /// Maximum absolute per-channel difference to another buffer.
    pub fn max_abs_diff(&self, other: &FrameBuffer<T>) -> f64 {
        self.color
            .iter()
            .zip(&other.color)
            .map(|(a, b)| (a - b).abs().max().to_f64())
            .fold(0.0, f64::max)
    }
}
