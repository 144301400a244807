use nalgebra::Vector3;

use super::EvalError;
use crate::geom::{fit_similarity, rotation_angle, PoseSE3, Sim3};
use crate::stats::rmse;

/// Timestamped camera-to-world poses, as stored in TUM files.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    entries: Vec<(f64, PoseSE3)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(f64, PoseSE3)>) -> Result<Self, EvalError> {
        if let Some(i) = entries.windows(2).position(|w| !(w[1].0 > w[0].0)) {
            return Err(EvalError::NotIncreasing(i + 1));
        }
        Ok(Self { entries })
    }

    /// Frames numbered `0, 1, 2, …` from world-to-camera poses.
    pub fn from_world_to_camera(poses: &[PoseSE3]) -> Self {
        Self {
            entries: poses.iter().enumerate().map(|(i, p)| (i as f64, p.inverse())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(f64, PoseSE3)] {
        &self.entries
    }

    pub fn poses(&self) -> impl Iterator<Item = &PoseSE3> {
        self.entries.iter().map(|(_, p)| p)
    }

    /// Camera centers.
    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses().map(|p| p.translation).collect()
    }

    /// Applies a similarity to every pose.
    pub fn transformed(&self, sim: &Sim3) -> Self {
        Self {
            entries: self.entries.iter().map(|(t, p)| (*t, sim.transform_pose(p))).collect(),
        }
    }

    /// The first `max_frames` entries, then every `stride`-th of those.
    pub fn subsampled(&self, max_frames: usize, stride: usize) -> Self {
        Self {
            entries: subsample(&self.entries, max_frames, stride),
        }
    }
}

/// Keeps the first `max_frames` items, then every `stride`-th of those
/// (e.g. 90 and 3 for the usual pose-evaluation protocol).
pub fn subsample<T: Clone>(items: &[T], max_frames: usize, stride: usize) -> Vec<T> {
    items.iter().take(max_frames).step_by(stride.max(1)).cloned().collect()
}

fn check_lengths(pred: &Trajectory, gt: &Trajectory) -> Result<(), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    Ok(())
}

/// Least-squares similarity taking predicted camera centers onto the
/// ground-truth ones.
pub fn umeyama_sim3(pred: &Trajectory, gt: &Trajectory) -> Result<Sim3, EvalError> {
    check_lengths(pred, gt)?;
    if pred.len() < 3 {
        return Err(EvalError::TooShort { needed: 3, got: pred.len() });
    }
    Ok(fit_similarity(&pred.positions(), &gt.positions(), None, true)?.transform)
}

/// Absolute translation error: RMSE of camera-center differences after
/// similarity alignment.
pub fn ate(pred: &Trajectory, gt: &Trajectory) -> Result<f64, EvalError> {
    let sim = umeyama_sim3(pred, gt)?;
    Ok(rmse(
        pred.positions()
            .iter()
            .zip(gt.positions())
            .map(|(p, g)| (sim.apply(p) - g).norm()),
    ))
}

/// Relative pose error over frame gaps of `delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RpeReport {
    /// Translation RMSE, after scaling the prediction by the alignment scale.
    pub trans: f64,
    /// Rotation RMSE in degrees.
    pub rot_deg: f64,
}

/// For every `i`, compares `gt_i⁻¹ gt_{i+δ}` with `pred_i⁻¹ pred_{i+δ}`.
pub fn rpe(pred: &Trajectory, gt: &Trajectory, delta: usize) -> Result<RpeReport, EvalError> {
    check_lengths(pred, gt)?;
    if delta == 0 || pred.len() <= delta {
        return Err(EvalError::TooShort {
            needed: delta.max(1) + 1,
            got: pred.len(),
        });
    }
    let scale = umeyama_sim3(pred, gt)?.scale;
    let scaled: Vec<PoseSE3> = pred
        .poses()
        .map(|p| PoseSE3 {
            rotation: p.rotation,
            translation: p.translation * scale,
        })
        .collect();
    let gt: Vec<&PoseSE3> = gt.poses().collect();
    let mut trans = Vec::new();
    let mut rot = Vec::new();
    for i in 0..scaled.len() - delta {
        let rel_gt = gt[i].inverse().compose(gt[i + delta]);
        let rel_pred = scaled[i].inverse().compose(&scaled[i + delta]);
        let err = rel_gt.inverse().compose(&rel_pred);
        trans.push(err.translation.norm());
        rot.push(rotation_angle(&err.rotation).to_degrees());
    }
    Ok(RpeReport {
        trans: rmse(trans),
        rot_deg: rmse(rot),
    })
}
