//! Trajectory and depth evaluation.

mod depth;
mod trajectory;


pub use depth::{
    align_depth, depth_metrics, evaluate_depth, DepthAlignment, DepthAlignmentMode,
    DepthEvalReport,
};
pub use trajectory::{ate, rpe, subsample, umeyama_sim3, RpeReport, Trajectory};

use thiserror::Error;

use crate::geom::GeomError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("timestamps must be strictly increasing (entry {0})")]
    NotIncreasing(usize),
    #[error("prediction has {pred} entries but ground truth has {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("need at least {needed} poses, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("frame {0}: depth map shapes differ")]
    ShapeMismatch(usize),
    #[error("frame {0}: no pixel is valid in both prediction and ground truth")]
    NoValidPixels(usize),
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error(transparent)]
    Geom(#[from] GeomError),
}
