use super::EvalError;
use crate::geom::{DepthMap, Grid};
use crate::stats::median;

/// How predicted depth is brought onto the ground-truth scale before
/// scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthAlignmentMode {
    /// One least-squares scale and shift for the whole sequence.
    #[default]
    ScaleShift,
    /// One least-squares scale for the whole sequence.
    Scale,
    /// Per-frame ratio of ground-truth to predicted medians.
    PerFrameMedian,
    None,
}

/// Parameters applied as `scale_t · pred + shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthAlignment {
    pub mode: DepthAlignmentMode,
    /// One scale per frame (all equal except for per-frame median).
    pub scales: Vec<f64>,
    pub shift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthEvalReport {
    pub abs_rel: f64,
    pub delta_125: f64,
    pub alignment: DepthAlignment,
    pub pixel_count: usize,
}

fn check_shapes(pred: &[DepthMap], gt: &[DepthMap]) -> Result<(), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    if let Some(t) = (0..pred.len()).find(|&t| pred[t].size() != gt[t].size()) {
        return Err(EvalError::ShapeMismatch(t));
    }
    Ok(())
}

fn overlap<'a>(p: &'a DepthMap, g: &'a DepthMap) -> impl Iterator<Item = (f64, f64)> + 'a {
    p.depth
        .as_slice()
        .iter()
        .zip(p.valid.as_slice())
        .zip(g.depth.as_slice().iter().zip(g.valid.as_slice()))
        .filter(|((_, &pv), (_, &gv))| pv && gv)
        .map(|((&p, _), (&g, _))| (p, g))
}

/// Aligns `pred` to `gt`. Pixels whose aligned depth is not positive become
/// invalid.
pub fn align_depth(
    pred: &[DepthMap],
    gt: &[DepthMap],
    mode: DepthAlignmentMode,
) -> Result<(Vec<DepthMap>, DepthAlignment), EvalError> {
    check_shapes(pred, gt)?;
    if pred.is_empty() {
        return Err(EvalError::NoValidPixels(0));
    }
    if let Some(t) = (0..pred.len()).find(|&t| overlap(&pred[t], &gt[t]).next().is_none()) {
        return Err(EvalError::NoValidPixels(t));
    }
    let all = || pred.iter().zip(gt).flat_map(|(p, g)| overlap(p, g));
    let n = pred.len();
    let (scales, shift) = match mode {
        DepthAlignmentMode::None => (vec![1.0; n], 0.0),
        DepthAlignmentMode::Scale => {
            let (pg, pp) = all().fold((0.0, 0.0), |(a, b), (p, g)| (a + p * g, b + p * p));
            if !(pp > 0.0) {
                return Err(EvalError::Degenerate("predicted depth is zero everywhere"));
            }
            (vec![pg / pp; n], 0.0)
        }
        DepthAlignmentMode::ScaleShift => {
            let (mut sp, mut sg, mut spp, mut spg, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (p, g) in all() {
                sp += p;
                sg += g;
                spp += p * p;
                spg += p * g;
                cnt += 1.0;
            }
            // Centered normal equations.
            let (mp, mg) = (sp / cnt, sg / cnt);
            let var = spp / cnt - mp * mp;
            if !(var > 1e-15 * (spp / cnt)) {
                return Err(EvalError::Degenerate("predicted depth is constant"));
            }
            let s = (spg / cnt - mp * mg) / var;
            (vec![s; n], mg - s * mp)
        }
        DepthAlignmentMode::PerFrameMedian => {
            let scales = pred
                .iter()
                .zip(gt)
                .map(|(p, g)| {
                    let (mut ps, mut gs): (Vec<f64>, Vec<f64>) = overlap(p, g).unzip();
                    median(&mut gs) / median(&mut ps)
                })
                .collect();
            (scales, 0.0)
        }
    };
    let aligned = pred
        .iter()
        .zip(&scales)
        .map(|(p, s)| {
            let depth = p.depth.map(|d| s * d + shift);
            let valid = Grid::from_fn(p.size(), |u, v| *p.valid.get(u, v) && *depth.get(u, v) > 0.0);
            DepthMap { depth, valid }
        })
        .collect();
    Ok((aligned, DepthAlignment { mode, scales, shift }))
}

/// Abs Rel and δ<1.25 over pixels valid in both maps (and in `mask`, when
/// given).
pub fn depth_metrics(
    pred_aligned: &[DepthMap],
    gt: &[DepthMap],
    mask: Option<&[Grid<bool>]>,
) -> Result<DepthEvalReport, EvalError> {
    check_shapes(pred_aligned, gt)?;
    let (mut abs_rel, mut inliers, mut count) = (0.0, 0usize, 0usize);
    for (t, (p, g)) in pred_aligned.iter().zip(gt).enumerate() {
        let m = mask.map(|m| m[t].as_slice());
        for (i, ((&pd, &pv), (&gd, &gv))) in p
            .depth
            .as_slice()
            .iter()
            .zip(p.valid.as_slice())
            .zip(g.depth.as_slice().iter().zip(g.valid.as_slice()))
            .enumerate()
        {
            if !(pv && gv && pd > 0.0) || m.is_some_and(|m| !m[i]) {
                continue;
            }
            abs_rel += (pd - gd).abs() / gd;
            inliers += ((pd / gd).max(gd / pd) < 1.25) as usize;
            count += 1;
        }
    }
    if count == 0 {
        return Err(EvalError::NoValidPixels(0));
    }
    Ok(DepthEvalReport {
        abs_rel: abs_rel / count as f64,
        delta_125: inliers as f64 / count as f64,
        alignment: DepthAlignment {
            mode: DepthAlignmentMode::None,
            scales: vec![1.0; pred_aligned.len()],
            shift: 0.0,
        },
        pixel_count: count,
    })
}

/// Aligns, then scores.
pub fn evaluate_depth(
    pred: &[DepthMap],
    gt: &[DepthMap],
    mode: DepthAlignmentMode,
) -> Result<DepthEvalReport, EvalError> {
    let (aligned, alignment) = align_depth(pred, gt, mode)?;
    let report = depth_metrics(&aligned, gt, None)?;
    Ok(DepthEvalReport { alignment, ..report })
}
