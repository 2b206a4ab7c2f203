//! A differentiable, tile-based CPU rasterizer for 3D Gaussian splatting
//! with probabilistic existence masks.
//!
//! Each Gaussian carries two learnable mask scores. Every training
//! iteration samples a binary existence mask per Gaussian via
//! Gumbel-Softmax and applies it *inside* the alpha-blending recursion:
//! color accumulation and transmittance consumption are both gated, so a
//! masked Gaussian renders as if pruned while still receiving an analytic
//! gradient for its existence probability. Gaussians whose probability
//! collapses are removed by repeated sampling.
//!
//! The crate contains the forward rasterizer, the analytic backward pass,
//! a training loop with mask regularization schedules, scene I/O (PLY,
//! PNG, manifests), and an independent verification oracle (a naive
//! renderer plus a finite-difference gradient checker). The accompanying
//! guide under `book/` walks through the math; its code snippets compile
//! and run as doctests via the [`book`] module.

pub mod camera;
pub mod cloud;
pub mod error;
pub mod mask;
pub mod options;
pub mod oracle;
pub mod real;
pub mod render;
pub mod sh;
pub mod splat;

pub use camera::Camera;
pub use cloud::GaussianCloud;
pub use error::{Error, Result};
pub use mask::{MaskConfig, MaskSample};
pub use options::{MaskApplication, RenderOptions};
pub use real::Real;
pub use render::{FrameBuffer, GradientSet};
pub use splat::Splat2D;
