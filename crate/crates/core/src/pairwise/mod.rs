//! Per-pair geometry: focal recovery, robust relative pose, camera-induced
//! flow and static-mask inference.

mod flow;
mod focal;
mod pnp;

pub use flow::{default_alpha, induced_flow, smooth_l1, static_mask, SMOOTH_L1_BETA};
pub use focal::estimate_focal;
pub use pnp::{estimate_relative_pose, p3p, refine_pose, Correspondence, RansacParams};

use thiserror::Error;

use crate::geom::{ConfidenceMap, GeomError, Grid, ImageSize, Pointmap, PoseSE3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PairwiseError {
    #[error("too few valid pixels: need {needed}, got {got}")]
    TooFewPixels { needed: usize, got: usize },
    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),
    #[error("pose estimation failed: best hypothesis had {inliers} inliers")]
    PoseFailure { inliers: usize },
    #[error("pair ({0}, {1}) is invalid: {2}")]
    InvalidPair(usize, usize, &'static str),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Network-style output for the frame pair `(from, to)`: both pointmaps are
/// expressed in the camera frame of `from`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEstimate {
    pub frame_ids: (usize, usize),
    /// Frame `from` at time `from`.
    pub pointmap_self: Pointmap,
    /// Frame `to` at time `to`.
    pub pointmap_other: Pointmap,
    pub conf_self: ConfidenceMap,
    pub conf_other: ConfidenceMap,
}

impl PairEstimate {
    pub fn new(
        frame_ids: (usize, usize),
        pointmap_self: Pointmap,
        pointmap_other: Pointmap,
        conf_self: ConfidenceMap,
        conf_other: ConfidenceMap,
    ) -> Result<Self, PairwiseError> {
        let size = pointmap_self.size();
        if pointmap_other.size() != size || conf_self.size() != size || conf_other.size() != size
        {
            return Err(PairwiseError::InvalidPair(
                frame_ids.0,
                frame_ids.1,
                "grids disagree in size",
            ));
        }
        if frame_ids.0 == frame_ids.1 {
            return Err(PairwiseError::InvalidPair(
                frame_ids.0,
                frame_ids.1,
                "frame ids must differ",
            ));
        }
        Ok(Self {
            frame_ids,
            pointmap_self,
            pointmap_other,
            conf_self,
            conf_other,
        })
    }

    pub fn size(&self) -> ImageSize {
        self.pointmap_self.size()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativePoseResult {
    /// Maps frame-`from` camera coordinates into frame-`to` camera coordinates.
    pub pose: PoseSE3,
    /// Inliers over the pixel grid of frame `to`.
    pub inlier_mask: Grid<bool>,
    pub inlier_count: usize,
    /// Set when estimation failed and `pose` is an identity placeholder.
    pub fallback: bool,
}

impl RelativePoseResult {
    pub fn fallback_identity(size: ImageSize) -> Self {
        Self {
            pose: PoseSE3::identity(),
            inlier_mask: Grid::filled(size, false),
            inlier_count: 0,
            fallback: true,
        }
    }
}
