//! Perspective-n-Point under RANSAC.
//!
//! Hypotheses come from a four-point minimal solve: three correspondences go
//! through P3P (the law-of-cosines system, solved by bracketing its roots
//! along the first ray distance) and the fourth picks among the up-to-four
//! candidate poses. Nothing assumes the points are non-planar. The winning
//! hypothesis is refined with Levenberg-Marquardt on the pixel reprojection
//! error, the same residual the inlier test uses.

use nalgebra::{Matrix2x3, Matrix3, Matrix6, Rotation3, Vector2, Vector3, Vector6};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::{PairEstimate, PairwiseError, RelativePoseResult};
use crate::geom::{fit_similarity, Grid, Intrinsics, PoseSE3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    /// Reprojection error threshold in pixels.
    pub threshold: f64,
    /// Sample correspondences proportionally to `conf_other`.
    pub confidence_weighted: bool,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 200,
            threshold: 2.0,
            confidence_weighted: true,
        }
    }
}

/// A 3D point and the pixel it should project to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub point: Vector3<f64>,
    pub pixel: Vector2<f64>,
}

const MIN_CORRESPONDENCES: usize = 6;
const MIN_INLIERS: usize = 4;
const P3P_SAMPLES: usize = 256;

fn reprojection_error(pose: &PoseSE3, c: &Correspondence, k: &Intrinsics) -> Option<f64> {
    let q = pose.apply(&c.point);
    if q.z <= 0.0 {
        return None;
    }
    let u = k.focal * q.x / q.z + k.cx;
    let v = k.focal * q.y / q.z + k.cy;
    Some(((u - c.pixel.x).powi(2) + (v - c.pixel.y).powi(2)).sqrt())
}

/// Candidate poses mapping `points` onto the unit `bearings`.
///
/// With distances `s_i` along the bearings, the unknowns satisfy
/// `s_i² + s_j² - 2 s_i s_j cos θ_ij = d_ij²`. The first two constraints give
/// `s_2` and `s_3` in closed form from `s_1` (two branches each); roots of the
/// remaining constraint are bracketed on a uniform grid of `s_1` and refined by
/// bisection.
pub fn p3p(points: &[Vector3<f64>; 3], bearings: &[Vector3<f64>; 3]) -> Vec<PoseSE3> {
    let d12 = (points[0] - points[1]).norm();
    let d13 = (points[0] - points[2]).norm();
    let d23 = (points[1] - points[2]).norm();
    let c12 = bearings[0].dot(&bearings[1]);
    let c13 = bearings[0].dot(&bearings[2]);
    let c23 = bearings[1].dot(&bearings[2]);
    let sin12 = (1.0 - c12 * c12).max(0.0).sqrt();
    let sin13 = (1.0 - c13 * c13).max(0.0).sqrt();
    if d12 < 1e-12 || d13 < 1e-12 || d23 < 1e-12 || sin12 < 1e-12 || sin13 < 1e-12 {
        return Vec::new();
    }
    let s1_max = (d12 / sin12).min(d13 / sin13);

    // Returns (s2, s3) on a branch, or None outside its domain.
    let branch = |s1: f64, b2: f64, b3: f64| -> Option<(f64, f64)> {
        let r2 = d12 * d12 - s1 * s1 * sin12 * sin12;
        let r3 = d13 * d13 - s1 * s1 * sin13 * sin13;
        if r2 < 0.0 || r3 < 0.0 {
            return None;
        }
        Some((s1 * c12 + b2 * r2.sqrt(), s1 * c13 + b3 * r3.sqrt()))
    };
    let residual = |s1: f64, b2: f64, b3: f64| -> Option<f64> {
        branch(s1, b2, b3).map(|(s2, s3)| s2 * s2 + s3 * s3 - 2.0 * s2 * s3 * c23 - d23 * d23)
    };

    let mut roots: Vec<(f64, f64, f64)> = Vec::new();
    for (b2, b3) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let grid = |i: usize| s1_max * i as f64 / P3P_SAMPLES as f64;
        let mut prev: Option<(f64, f64)> = None;
        for i in 1..=P3P_SAMPLES {
            let s = grid(i);
            let Some(f) = residual(s, b2, b3) else {
                prev = None;
                continue;
            };
            if f == 0.0 {
                roots.push((s, b2, b3));
            } else if let Some((sp, fp)) = prev {
                if fp != 0.0 && fp.signum() != f.signum() {
                    let (mut lo, mut hi, mut flo) = (sp, s, fp);
                    for _ in 0..100 {
                        let mid = 0.5 * (lo + hi);
                        if mid <= lo || mid >= hi {
                            break;
                        }
                        let fm = residual(mid, b2, b3).unwrap_or(0.0);
                        if fm == 0.0 {
                            lo = mid;
                            hi = mid;
                            break;
                        }
                        if fm.signum() == flo.signum() {
                            lo = mid;
                            flo = fm;
                        } else {
                            hi = mid;
                        }
                    }
                    roots.push((0.5 * (lo + hi), b2, b3));
                }
            }
            prev = Some((s, f));
        }
    }

    let mut poses = Vec::new();
    for (s1, b2, b3) in roots {
        let Some((s2, s3)) = branch(s1, b2, b3) else {
            continue;
        };
        if s1 <= 0.0 || s2 <= 0.0 || s3 <= 0.0 {
            continue;
        }
        let cam = [bearings[0] * s1, bearings[1] * s2, bearings[2] * s3];
        if let Ok(fit) = fit_similarity(points, &cam, None, false) {
            poses.push(PoseSE3 {
                rotation: fit.transform.rotation,
                translation: fit.transform.translation,
            });
        }
    }
    poses
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn squared_error(pose: &PoseSE3, corr: &[Correspondence], k: &Intrinsics) -> f64 {
    corr.iter()
        .map(|c| reprojection_error(pose, c, k).map_or(1e12, |e| e * e))
        .sum()
}

/// Levenberg-Marquardt refinement of the pixel reprojection error over
/// `corr`, with left-multiplied rotation updates.
pub fn refine_pose(
    initial: &PoseSE3,
    corr: &[Correspondence],
    k: &Intrinsics,
    max_iterations: usize,
) -> PoseSE3 {
    let mut pose = *initial;
    let mut cost = squared_error(&pose, corr, k);
    let mut lambda = 1e-3;
    for _ in 0..max_iterations {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for c in corr {
            let rx = pose.rotation * c.point;
            let q = rx + pose.translation;
            if q.z <= 0.0 {
                continue;
            }
            let iz = 1.0 / q.z;
            let r = Vector2::new(
                k.focal * q.x * iz + k.cx - c.pixel.x,
                k.focal * q.y * iz + k.cy - c.pixel.y,
            );
            let dproj = Matrix2x3::new(
                k.focal * iz,
                0.0,
                -k.focal * q.x * iz * iz,
                0.0,
                k.focal * iz,
                -k.focal * q.y * iz * iz,
            );
            let mut j = nalgebra::Matrix2x6::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dproj * -skew(&rx)));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += lambda * (1.0 + jtj[(i, i)]);
            }
            let Some(step) = damped.cholesky().map(|ch| ch.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let omega = Vector3::new(step[0], step[1], step[2]);
            let delta = Rotation3::new(omega);
            let candidate = PoseSE3 {
                rotation: delta.matrix() * pose.rotation,
                translation: delta.matrix() * pose.translation + Vector3::new(step[3], step[4], step[5]),
            };
            let new_cost = squared_error(&candidate, corr, k);
            if new_cost < cost {
                let rel = (cost - new_cost) / cost.max(1e-300);
                pose = candidate.renormalized();
                cost = new_cost;
                lambda = (lambda * 0.3).max(1e-12);
                improved = rel > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    pose
}

/// Relative pose of camera `to` with respect to camera `from` by PnP between
/// the pixel grid of frame `to` and `pointmap_other` (which lives in frame
/// `from` coordinates).
pub fn estimate_relative_pose<R: Rng + ?Sized>(
    pair: &PairEstimate,
    k_other: &Intrinsics,
    ransac: &RansacParams,
    rng: &mut R,
) -> Result<RelativePoseResult, PairwiseError> {
    let size = pair.size();
    let mut corr = Vec::new();
    let mut indices = Vec::new();
    let mut weights = Vec::new();
    for (i, p) in pair.pointmap_other.valid_points() {
        corr.push(Correspondence {
            point: *p,
            pixel: size.pixel(i),
        });
        indices.push(i);
        weights.push(pair.conf_other.values.as_slice()[i]);
    }
    if corr.len() < MIN_CORRESPONDENCES {
        return Err(PairwiseError::TooFewPixels {
            needed: MIN_CORRESPONDENCES,
            got: corr.len(),
        });
    }
    let bearing = |c: &Correspondence| {
        let n = k_other.normalize(&c.pixel);
        Vector3::new(n.x, n.y, 1.0).normalize()
    };

    let sampler = if ransac.confidence_weighted {
        WeightedIndex::new(&weights).ok()
    } else {
        None
    };
    let draw = |rng: &mut R| -> usize {
        match &sampler {
            Some(s) => s.sample(rng),
            None => rng.random_range(0..corr.len()),
        }
    };

    let score = |pose: &PoseSE3| -> (usize, f64) {
        let mut count = 0;
        let mut err = 0.0;
        for c in &corr {
            if let Some(e) = reprojection_error(pose, c, k_other) {
                if e < ransac.threshold {
                    count += 1;
                    err += e;
                }
            }
        }
        (count, err)
    };

    let mut best: Option<(PoseSE3, usize, f64)> = None;
    for _ in 0..ransac.iterations {
        let mut sample = [0usize; 4];
        let mut filled = 0;
        let mut attempts = 0;
        while filled < 4 && attempts < 100 {
            attempts += 1;
            let idx = draw(rng);
            if !sample[..filled].contains(&idx) {
                sample[filled] = idx;
                filled += 1;
            }
        }
        if filled < 4 {
            continue;
        }
        let pts = [corr[sample[0]].point, corr[sample[1]].point, corr[sample[2]].point];
        let brs = [bearing(&corr[sample[0]]), bearing(&corr[sample[1]]), bearing(&corr[sample[2]])];
        let fourth = &corr[sample[3]];
        let candidate = p3p(&pts, &brs)
            .into_iter()
            .filter_map(|pose| reprojection_error(&pose, fourth, k_other).map(|e| (pose, e)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((pose, _)) = candidate else {
            continue;
        };
        let (count, err) = score(&pose);
        let better = match &best {
            None => true,
            Some((_, bc, be)) => count > *bc || (count == *bc && err < *be),
        };
        if better {
            best = Some((pose, count, err));
        }
    }

    let Some((mut pose, mut count, _)) = best else {
        return Err(PairwiseError::PoseFailure { inliers: 0 });
    };
    if count < MIN_INLIERS {
        return Err(PairwiseError::PoseFailure { inliers: count });
    }

    let inliers_of = |pose: &PoseSE3| -> Vec<bool> {
        corr.iter()
            .map(|c| reprojection_error(pose, c, k_other).is_some_and(|e| e < ransac.threshold))
            .collect()
    };
    for _ in 0..3 {
        let flags = inliers_of(&pose);
        let subset: Vec<Correspondence> = corr
            .iter()
            .zip(&flags)
            .filter_map(|(c, &ok)| ok.then_some(*c))
            .collect();
        let refined = refine_pose(&pose, &subset, k_other, 30);
        let (new_count, _) = score(&refined);
        if new_count < count {
            break;
        }
        pose = refined;
        count = new_count;
    }

    let flags = inliers_of(&pose);
    let mut mask = Grid::filled(size, false);
    for (&i, &ok) in indices.iter().zip(&flags) {
        mask.as_mut_slice()[i] = ok;
    }
    let inlier_count = flags.iter().filter(|&&f| f).count();
    if inlier_count < MIN_INLIERS {
        return Err(PairwiseError::PoseFailure {
            inliers: inlier_count,
        });
    }
    Ok(RelativePoseResult {
        pose,
        inlier_mask: mask,
        inlier_count,
        fallback: false,
    })
}
