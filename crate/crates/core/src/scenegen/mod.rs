//! Procedural scene generation: primitive arrangements with class labels,
//! camera rigs looking at the origin, analytic ground-truth rendering,
//! template annotations, and the dataset manifest tying them together.

mod annotate;
mod camera;
mod dataset;
mod primitives;
mod scene;

pub use annotate::{generate_annotations, Annotations, QaPair};
pub use camera::{sample_cameras, CameraPose, RING_ELEVATION_DEG};
pub use dataset::{
    build_sample, read_manifest, split_for, write_manifest, DatasetSample, ManifestRecord, Split,
};
pub use primitives::{Primitive, Shape};
pub use scene::{
    render_ground_truth, sample_scene, ProceduralScene, CLASSES, COLORS, SIGMA_MAX,
};

use crate::nerf::NerfError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenegenError {
    #[error("camera position may not be the origin")]
    DegenerateCamera,
    #[error("bad camera: {0}")]
    BadCamera(String),
    #[error("unknown class {class:?}")]
    UnknownClass { class: String },
    #[error("scene {id} stayed invisible in too many views after resampling")]
    InvisibleScene { id: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("manifest error: {detail}")]
    Manifest { detail: String },
    #[error(transparent)]
    Nerf(#[from] NerfError),
}
