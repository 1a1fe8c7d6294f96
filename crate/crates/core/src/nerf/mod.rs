//! Neural radiance fields at object scale: positional encoding, the NeRF MLP,
//! the volumetric renderer shared with ground-truth rendering, and the
//! per-object trainer.

mod encode;
mod mlp;
mod render;
mod train;

pub use encode::{encode_points, positional_encode, ENC_DIM, ENC_FREQS};
pub use mlp::NerfMlp;
pub use render::{
    composite, depth_deltas, opacity_to_mask, photometric_loss, pixel_ray, psnr, render_image,
    render_ray, render_rays, sample_depths, Ray, RenderConfig, PSNR_SENTINEL,
};
pub use train::{build_render_loss, freq_weights, train_nerf, RayBatch, TrainConfig, TrainedNerf, View};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NerfError {
    #[error("non-finite NeRF weights")]
    NonFiniteWeights,
    #[error("bad NeRF architecture: L={l} H={h} does not match stored shapes")]
    BadArchitecture { l: usize, h: usize },
    #[error("ray direction norm {norm} is not 1")]
    BadRay { norm: f64 },
    #[error("bad render config: {0}")]
    BadConfig(String),
    #[error("camera positioned at the origin")]
    DegeneratePose,
    #[error("shape mismatch in {what}")]
    ShapeMismatch { what: &'static str },
    #[error("need at least {need} views, got {got}")]
    InsufficientViews { need: usize, got: usize },
    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: usize },
    #[error("numerics failure: {0}")]
    Numerics(#[from] crate::numerics::NumericsError),
}

/// Anything that maps 3D points to activated radiance: rgb ∈ [0,1]³, σ ≥ 0.
/// Implemented by trained NeRFs, analytic scenes, and decoded embeddings, so
/// the one renderer serves all three.
pub trait Field {
    fn query(&self, points: &[[f64; 3]], rgb: &mut Vec<[f64; 3]>, sigma: &mut Vec<f64>);
}
