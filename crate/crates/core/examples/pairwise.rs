//! Per-pair stage on one frame pair: focal from the pointmap, relative pose by
//! RANSAC PnP, camera-induced flow and the static mask.
use dynscene::geom::{ImageSize, Intrinsics};
use dynscene::graph::{build_window_graph, Edge};
use dynscene::oracle::{render_sequence, SceneSpec};
use dynscene::pairwise::{default_alpha, estimate_focal, estimate_relative_pose, induced_flow, static_mask, RansacParams};
use rand::SeedableRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let size = ImageSize::new(48, 64)?;
    let spec = SceneSpec::dolly_orbit(10, size, 50.0).with_circling_sphere(2.2, 0.5, 0.25, 8.0);
    let seq = render_sequence(&spec, &build_window_graph(10, 3, 1)?)?;
    let oracle = seq.edge(&Edge::new(3, 5)).expect("edge in graph");
    let pair = &oracle.pair;

    let focal = estimate_focal(&pair.pointmap_self)?;
    println!("focal {focal:.4} (true 50)");

    let k = Intrinsics::new(focal, size.width as f64 / 2.0, size.height as f64 / 2.0, size)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let rel = estimate_relative_pose(pair, &k, &RansacParams::default(), &mut rng)?;
    let err = (rel.pose.translation - oracle.relative_pose.translation).norm();
    println!("relative pose: {} inliers, translation error {err:.2e}", rel.inlier_count);

    let depth = dynscene::geom::DepthMap::new(
        pair.pointmap_self.points.map(|p| p.z),
        pair.pointmap_self.valid.clone(),
    )?;
    let f_cam = induced_flow(&depth, &k, &k, &rel.pose)?;
    let mask = static_mask(&f_cam, &oracle.flow, default_alpha(size))?;
    // Pixels without a valid flow vector are never called static.
    let flagged = mask.is_static.as_slice().iter().filter(|&&s| !s).count();
    let no_flow = oracle.flow.valid.as_slice().iter().filter(|&&v| !v).count();
    let moving = seq.frames[3].dynamic_mask.as_slice().iter().filter(|&&b| b).count();
    println!("non-static pixels {flagged}, {no_flow} of them without flow (moving-object pixels {moving})");
    Ok(())
}
