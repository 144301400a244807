use nalgebra::{Vector2, Vector3};

use super::PairwiseError;
use crate::geom::{DepthMap, FlowField, GeomError, Grid, ImageSize, Intrinsics, PoseSE3, StaticMask};

/// Transition point of the smooth-L1 norm, in pixels.
pub const SMOOTH_L1_BETA: f64 = 1.0;

/// Default static-mask threshold: 1% of the image diagonal, in pixels.
pub fn default_alpha(size: ImageSize) -> f64 {
    0.01 * size.diagonal()
}

/// Componentwise smooth-L1, summed over both components.
pub fn smooth_l1(r: &Vector2<f64>, beta: f64) -> f64 {
    r.iter()
        .map(|&c| {
            let a = c.abs();
            if a < beta {
                0.5 * a * a / beta
            } else {
                a - 0.5 * beta
            }
        })
        .sum()
}

/// Flow caused by camera motion alone:
/// `π(D K' R K⁻¹ x̂ + K' T) - x` for every pixel `x` of frame `t`.
///
/// Pixels with invalid depth, or whose transformed depth is not positive,
/// are invalid in the output.
pub fn induced_flow(
    depth_t: &DepthMap,
    k_t: &Intrinsics,
    k_t2: &Intrinsics,
    rel: &PoseSE3,
) -> Result<FlowField, PairwiseError> {
    let size = depth_t.size();
    if k_t.size != size {
        return Err(GeomError::ShapeMismatch {
            expected: size,
            got: k_t.size,
        }
        .into());
    }
    let mut flow = Vec::with_capacity(size.num_pixels());
    let mut valid = Vec::with_capacity(size.num_pixels());
    for (i, (&d, &ok)) in depth_t
        .depth
        .as_slice()
        .iter()
        .zip(depth_t.valid.as_slice())
        .enumerate()
    {
        let x = size.pixel(i);
        if !ok {
            flow.push(Vector2::zeros());
            valid.push(false);
            continue;
        }
        // Dividing the homogeneous point by depth keeps the identity motion exact:
        // with R = I and T = 0 the flow below is exactly zero.
        let n = k_t.normalize(&x);
        let h = rel.rotation * Vector3::new(n.x, n.y, 1.0) + rel.translation / d;
        if h.z <= 0.0 {
            flow.push(Vector2::zeros());
            valid.push(false);
            continue;
        }
        flow.push(Vector2::new(
            k_t2.focal * (h.x / h.z) - k_t.focal * n.x + (k_t2.cx - k_t.cx),
            k_t2.focal * (h.y / h.z) - k_t.focal * n.y + (k_t2.cy - k_t.cy),
        ));
        valid.push(true);
    }
    Ok(FlowField::new(
        Grid::from_vec(size, flow)?,
        Grid::from_vec(size, valid)?,
    )?)
}

/// A pixel is static iff both flows are valid there and
/// `alpha > smoothL1(f_cam - f_est)`.
pub fn static_mask(
    f_cam: &FlowField,
    f_est: &FlowField,
    alpha: f64,
) -> Result<StaticMask, PairwiseError> {
    if f_cam.size() != f_est.size() {
        return Err(GeomError::ShapeMismatch {
            expected: f_cam.size(),
            got: f_est.size(),
        }
        .into());
    }
    let size = f_cam.size();
    let is_static = Grid::from_fn(size, |u, v| {
        *f_cam.valid.get(u, v)
            && *f_est.valid.get(u, v)
            && alpha > smooth_l1(&(f_cam.flow.get(u, v) - f_est.flow.get(u, v)), SMOOTH_L1_BETA)
    });
    Ok(StaticMask { is_static })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn size() -> ImageSize {
        ImageSize::new(12, 16).unwrap()
    }

    #[test]
    fn identity_motion_gives_zero_flow() {
        let k = Intrinsics::centered(20.0, size()).unwrap();
        let d = DepthMap::from_values(Grid::from_fn(size(), |u, v| 1.0 + (u * v) as f64 * 0.1));
        let f = induced_flow(&d, &k, &k, &PoseSE3::identity()).unwrap();
        assert!(f.flow.as_slice().iter().all(|v| v.norm() == 0.0));
        assert!(f.valid.as_slice().iter().all(|&b| b));
    }

    #[test]
    fn lateral_parallax() {
        let k = Intrinsics::centered(100.0, size()).unwrap();
        let d = DepthMap::from_values(Grid::filled(size(), 10.0));
        let rel = PoseSE3::from_translation(Vector3::new(0.5, 0.0, 0.0));
        let f = induced_flow(&d, &k, &k, &rel).unwrap();
        for v in f.flow.as_slice() {
            assert!((v.x - 5.0).abs() < 1e-12 && v.y.abs() < 1e-12);
        }
    }

    #[test]
    fn behind_camera_is_invalid() {
        let k = Intrinsics::centered(10.0, size()).unwrap();
        let d = DepthMap::from_values(Grid::filled(size(), 1.0));
        let rel = PoseSE3::from_translation(Vector3::new(0.0, 0.0, -2.0));
        let f = induced_flow(&d, &k, &k, &rel).unwrap();
        assert!(f.valid.as_slice().iter().all(|&b| !b));
    }

    #[test]
    fn smooth_l1_pieces() {
        assert_eq!(smooth_l1(&Vector2::new(0.5, 0.0), 1.0), 0.125);
        assert_eq!(smooth_l1(&Vector2::new(-3.0, 0.5), 1.0), 2.5 + 0.125);
    }

    #[test]
    fn mask_examples() {
        let alpha = default_alpha(size());
        let est = FlowField::new(
            Grid::from_fn(size(), |u, v| Vector2::new(u as f64 * 0.3, v as f64 * -0.2)),
            Grid::filled(size(), true),
        )
        .unwrap();
        let same = static_mask(&est, &est, alpha).unwrap();
        assert_eq!(same.num_static(), size().num_pixels());

        let zero = FlowField::zeros(size());
        let mut bumped = FlowField::zeros(size());
        *bumped.flow.get_mut(5, 3) = Vector2::new(2.0 * alpha + SMOOTH_L1_BETA, 0.0);
        let m = static_mask(&zero, &bumped, alpha).unwrap();
        assert_eq!(m.num_static(), size().num_pixels() - 1);
        assert!(!*m.is_static.get(5, 3));
    }

    proptest! {
        #[test]
        fn mask_is_monotone_in_alpha(a1 in 0.01f64..5.0, extra in 0.0f64..5.0, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let cam = FlowField::zeros(size());
            let est = FlowField::new(
                Grid::from_fn(size(), |_, _| Vector2::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0))),
                Grid::filled(size(), true),
            ).unwrap();
            let m1 = static_mask(&cam, &est, a1).unwrap();
            let m2 = static_mask(&cam, &est, a1 + extra).unwrap();
            for (s1, s2) in m1.is_static.as_slice().iter().zip(m2.is_static.as_slice()) {
                prop_assert!(!*s1 || *s2);
            }
        }
    }
}
