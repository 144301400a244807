use nalgebra::{Matrix3, Vector3};

use super::{GeomError, Sim3};

/// Relative singular-value floor below which a point set is treated as collinear.
const COLLINEAR_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityFit {
    pub transform: Sim3,
    /// Weighted RMS of `|dst - T(src)|` after the fit.
    pub rms: f64,
}

/// Closed-form weighted least-squares fit of `dst ≈ s R src + t`
/// (Umeyama). With `with_scale = false` the scale is pinned to 1 (Kabsch).
///
/// Fails when fewer than three points are given or when either set is
/// collinear.
pub fn fit_similarity(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    weights: Option<&[f64]>,
    with_scale: bool,
) -> Result<SimilarityFit, GeomError> {
    if src.len() != dst.len() {
        return Err(GeomError::Degenerate("point sets differ in length"));
    }
    if src.len() < 3 {
        return Err(GeomError::Degenerate("need at least three points"));
    }
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..src.len()).map(weight).sum();
    if !(total > 0.0) {
        return Err(GeomError::Degenerate("weights sum to zero"));
    }

    let mut mu_src = Vector3::zeros();
    let mut mu_dst = Vector3::zeros();
    for i in 0..src.len() {
        mu_src += weight(i) * src[i];
        mu_dst += weight(i) * dst[i];
    }
    mu_src /= total;
    mu_dst /= total;

    let mut cov = Matrix3::zeros();
    let mut src_cov = Matrix3::zeros();
    let mut dst_cov = Matrix3::zeros();
    let mut var_src = 0.0;
    for i in 0..src.len() {
        let a = src[i] - mu_src;
        let b = dst[i] - mu_dst;
        let w = weight(i);
        cov += w * b * a.transpose();
        src_cov += w * a * a.transpose();
        dst_cov += w * b * b.transpose();
        var_src += w * a.norm_squared();
    }
    cov /= total;
    var_src /= total;

    for c in [&src_cov, &dst_cov] {
        let sv = c.singular_values();
        let (hi, mid) = sorted_top_two(&sv);
        if !(mid > COLLINEAR_TOLERANCE * hi) || hi == 0.0 {
            return Err(GeomError::Degenerate("collinear or coincident points"));
        }
    }

    let svd = cov.svd(true, true);
    let u = svd.u.ok_or(GeomError::Degenerate("svd failed"))?;
    let v_t = svd.v_t.ok_or(GeomError::Degenerate("svd failed"))?;
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = if with_scale {
        let trace: f64 = (0..3).map(|i| svd.singular_values[i] * s[(i, i)]).sum();
        trace / var_src
    } else {
        1.0
    };
    let translation = mu_dst - scale * rotation * mu_src;
    let transform = Sim3::new(scale, rotation, translation)?;

    let mut sq = 0.0;
    for i in 0..src.len() {
        sq += weight(i) * (dst[i] - transform.apply(&src[i])).norm_squared();
    }
    Ok(SimilarityFit {
        transform,
        rms: (sq / total).sqrt(),
    })
}

fn sorted_top_two(sv: &Vector3<f64>) -> (f64, f64) {
    let mut v = [sv[0], sv[1], sv[2]];
    v.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    (v[0], v[1])
}
