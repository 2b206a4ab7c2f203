use serde::{Deserialize, Serialize};

/// Where masks enter the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskApplication {
    /// Masks are applied inside the blending recursion (color accumulation
    /// and transmittance update). Masked splats still traverse the
    /// rasterizer and receive existence gradients.
    #[default]
    Blending,
    /// Baseline for comparison: the mask multiplies opacity before the
    /// alpha cutoff, so masked splats are filtered out and receive no
    /// gradient of any kind.
    OpacityMultiply,
}

/// Semantic constants of the rasterizer. Both the tiled renderer and the
/// naive verification renderer honor these; they are conventions of the
/// math, not implementation details.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Side length of a tile in pixels.
    pub tile_size: usize,
    /// Splats with alpha below this threshold contribute nothing and are
    /// not recorded.
    pub alpha_cutoff: f64,
    /// Alpha is clamped to this maximum.
    pub alpha_clamp: f64,
    /// Front-to-back compositing stops once transmittance falls below this
    /// value. Zero disables early stopping (used by verification paths).
    pub early_stop: f64,
    /// Low-pass floor added to both diagonal entries of the projected 2D
    /// covariance, in square pixels.
    pub covariance_floor: f64,
    /// Retain per-pixel contributor records for the backward pass.
    pub record_contributors: bool,
    /// Per-pixel cap on contributor records; overflow is counted.
    pub max_contributors: usize,
    /// Verification mode: skip footprint culling and bin every splat to
    /// every tile so the term set matches the naive renderer exactly.
    pub unbounded_footprint: bool,
    pub mask_application: MaskApplication,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            tile_size: 16,
            alpha_cutoff: 1.0 / 255.0,
            alpha_clamp: 0.99,
            early_stop: 1e-4,
            covariance_floor: 0.3,
            record_contributors: false,
            max_contributors: 1024,
            unbounded_footprint: false,
            mask_application: MaskApplication::Blending,
        }
    }
}

impl RenderOptions {
    /// Configuration for training: contributor records on, everything else
    /// as configured.
    pub fn for_training(mut self) -> Self {
        self.record_contributors = true;
        self
    }

    /// Configuration for gradient verification: records on, exact
    /// compositing (no early stop), and no alpha cutoff or footprint
    /// culling so the rendered function is smooth in every parameter.
    pub fn for_verification(mut self) -> Self {
        self.record_contributors = true;
        self.early_stop = 0.0;
        self.alpha_cutoff = 0.0;
        self.unbounded_footprint = true;
        self.max_contributors = usize::MAX;
        self
    }
}
