//! Trajectory and depth metrics on hand-made inputs: a prediction that differs
//! from the ground truth by a similarity plus a small drift, and depth maps
//! off by a global scale.
use dynscene::evalkit::{ate, evaluate_depth, rpe, DepthAlignmentMode, Trajectory};
use dynscene::geom::{DepthMap, Grid, ImageSize, PoseSE3, Sim3};
use nalgebra::Vector3;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gt: Vec<PoseSE3> = (0..20)
        .map(|i| {
            let t = i as f64;
            PoseSE3::from_axis_angle(&Vector3::y(), 0.04 * t, Vector3::new(0.2 * t, 0.1 * t.sin(), 0.0))
        })
        .collect();
    let sim = Sim3::new(2.5, *nalgebra::Rotation3::from_euler_angles(0.1, 0.5, -0.3).matrix(), Vector3::new(1.0, 2.0, 3.0))?;
    let pred: Vec<PoseSE3> = gt
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let drift = PoseSE3::from_axis_angle(&Vector3::x(), 0.002 * i as f64, Vector3::new(0.001 * i as f64, 0.0, 0.0));
            sim.transform_pose(&drift.compose(p))
        })
        .collect();
    let (pred, gt) = (Trajectory::from_world_to_camera(&pred), Trajectory::from_world_to_camera(&gt));
    let r = rpe(&pred, &gt, 1)?;
    println!("ATE {:.4}  RPE trans {:.4}  RPE rot {:.4}°", ate(&pred, &gt)?, r.trans, r.rot_deg);

    let size = ImageSize::new(8, 10)?;
    let gt_depth: Vec<DepthMap> = (0..3)
        .map(|t| DepthMap::from_values(Grid::from_fn(size, |u, v| 1.0 + 0.1 * (u + v + t) as f64)))
        .collect();
    let pred_depth: Vec<DepthMap> = gt_depth.iter().map(|d| DepthMap::from_values(d.depth.map(|x| 0.4 * x))).collect();
    for mode in [DepthAlignmentMode::None, DepthAlignmentMode::Scale, DepthAlignmentMode::PerFrameMedian] {
        let rep = evaluate_depth(&pred_depth, &gt_depth, mode)?;
        println!("{mode:?}: Abs Rel {:.4}  δ<1.25 {:.3}", rep.abs_rel, rep.delta_125);
    }
    Ok(())
}
