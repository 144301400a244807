use nalgebra::Vector2;

use super::PairwiseError;
use crate::geom::{Intrinsics, Pointmap};
use crate::stats::median;

const MIN_PIXELS: usize = 32;
const MAX_ITERATIONS: usize = 50;
const RELATIVE_TOLERANCE: f64 = 1e-6;

/// Focal length of a pointmap expressed in its own camera frame, with the
/// principal point at the image center.
///
/// Minimizes `Σ |p_i - f q_i|` where `p_i` is the centered pixel and `q_i` the
/// perspective-divided point, by Weiszfeld iterations started from the
/// median of the per-pixel closed-form focals `|p_i| / |q_i|`.
pub fn estimate_focal(pm: &Pointmap) -> Result<f64, PairwiseError> {
    let size = pm.size();
    let center = Intrinsics::centered(1.0, size)?;
    let mut samples: Vec<(Vector2<f64>, Vector2<f64>)> = Vec::new();
    for (i, x) in pm.valid_points() {
        if x.z > 0.0 {
            let px = size.pixel(i);
            let p = Vector2::new(px.x - center.cx, px.y - center.cy);
            samples.push((p, Vector2::new(x.x / x.z, x.y / x.z)));
        }
    }
    if samples.len() < MIN_PIXELS {
        return Err(PairwiseError::TooFewPixels {
            needed: MIN_PIXELS,
            got: samples.len(),
        });
    }

    let scale = samples.iter().map(|(p, _)| p.norm()).fold(0.0, f64::max);
    let mut closed_form: Vec<f64> = samples
        .iter()
        .filter(|(p, q)| q.norm() > 1e-12 && p.norm() > 1e-9 * scale.max(1.0))
        .map(|(p, q)| p.norm() / q.norm())
        .collect();
    if closed_form.is_empty() {
        return Err(PairwiseError::Degenerate("all points on the optical axis"));
    }
    let mut focal = median(&mut closed_form);

    for _ in 0..MAX_ITERATIONS {
        let (mut num, mut den) = (0.0, 0.0);
        for (p, q) in &samples {
            let w = 1.0 / (p - focal * q).norm().max(1e-8);
            num += w * p.dot(q);
            den += w * q.dot(q);
        }
        if !(den > 0.0) {
            break;
        }
        let next = num / den;
        if !(next > 0.0 && next.is_finite()) {
            return Err(PairwiseError::Degenerate("focal iteration diverged"));
        }
        let change = (next - focal).abs() / focal;
        focal = next;
        if change < RELATIVE_TOLERANCE {
            break;
        }
    }
    Ok(focal)
}
