//! Geometric primitives shared by every other module.
//!
//! Pixel convention: a pixel coordinate is `(u, v) = (column, row)`, with
//! pixel centers at integer coordinates and the origin at the top-left pixel.
//! Grids are stored row-major, so the pixel `(u, v)` lives at index
//! `v * width + u`. Camera frames are right-handed with `+z` forward,
//! `+x` right and `+y` down. A [`PoseSE3`] maps world coordinates into the
//! camera frame (`x_cam = R * x_world + T`).

mod camera;
mod fit;
mod grid;
mod transform;

pub use camera::{backproject, project, ImageSize, Intrinsics};
pub use fit::{fit_similarity, SimilarityFit};
pub use grid::{
    depth_from_pointmap, pointmap_from_depth, ConfidenceMap, DepthMap, FlowField, Grid, Pointmap,
    StaticMask,
};
pub use transform::{apply_pose, quat_to_rotation, rotation_angle, rotation_to_quat, PoseSE3, Sim3};

use thiserror::Error;

/// Tolerance used to validate rotation matrices (orthonormality and determinant).
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("point has non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("invalid image size {height}x{width}")]
    InvalidSize { height: usize, width: usize },
    #[error("invalid focal length {0}")]
    InvalidFocal(f64),
    #[error("matrix is not a proper rotation (orthonormality error {0:e})")]
    NotARotation(f64),
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("grid shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: ImageSize,
        got: ImageSize,
    },
    #[error("grid data length {got} does not match {height}x{width}")]
    DataLength {
        height: usize,
        width: usize,
        got: usize,
    },
    #[error("degenerate point configuration: {0}")]
    Degenerate(&'static str),
}
