use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use dynscene::cli::{self, CliError, GridContainer, RunConfig, SceneDirectory, ScenePreset, TumRecord};
use dynscene::evalkit::DepthAlignmentMode;
use dynscene::geom::{DepthMap, PoseSE3, Sim3};
use dynscene::graph::build_window_graph;
use nalgebra::Vector3;

fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.scene.frames = 8;
    c.scene.width = 32;
    c.scene.height = 24;
    c.scene.focal = 26.0;
    c.window = 3;
    c.stride = 1;
    c.schedule.iterations = 40;
    c
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dynscene"))
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = small_config();
    config.scene.depth_noise = 0.02;
    config.scene.moving_sphere = Some([2.0, 0.4, 0.3, 8.0]);
    config.seed = 5;
    cli::cmd_synth(&config, &tmp.path().join("a")).unwrap();
    cli::cmd_synth(&config, &tmp.path().join("b")).unwrap();
    let a = files(&tmp.path().join("a"));
    assert!(a.len() > 20);
    assert_eq!(a, files(&tmp.path().join("b")));
    config.seed = 6;
    cli::cmd_synth(&config, &tmp.path().join("c")).unwrap();
    assert_ne!(a, files(&tmp.path().join("c")));
}

#[test]
fn synth_files_are_geometrically_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = small_config();
    config.scene.preset = ScenePreset::Dolly;
    cli::cmd_synth(&config, tmp.path()).unwrap();
    let dir = SceneDirectory::new(tmp.path());
    let poses: Vec<PoseSE3> = cli::read_tum(&dir.poses())
        .unwrap()
        .iter()
        .map(|r| r.pose().inverse())
        .collect();
    assert_eq!(poses.len(), 8);
    let graph = build_window_graph(8, 3, 1).unwrap();
    for e in &graph.edges {
        let (pm_self, _) = GridContainer::read(&dir.pair_self(e)).unwrap().to_pointmap_with_confidence().unwrap();
        let (pm_other, _) = GridContainer::read(&dir.pair_other(e)).unwrap().to_pointmap_with_confidence().unwrap();
        let depth_from = GridContainer::read(&dir.depth(e.from)).unwrap().to_depth().unwrap();
        let depth_to = GridContainer::read(&dir.depth(e.to)).unwrap().to_depth().unwrap();
        let rel = poses[e.to].compose(&poses[e.from].inverse());
        for i in 0..pm_self.points.as_slice().len() {
            let d = depth_from.depth.as_slice()[i];
            assert!((pm_self.points.as_slice()[i].z - d).abs() < 1e-5 * d);
            // The second pointmap, moved into camera `to`, lands at that
            // frame's depth.
            let z = rel.apply(&pm_other.points.as_slice()[i]).z;
            let d = depth_to.depth.as_slice()[i];
            assert!((z - d).abs() < 1e-5 * d, "edge {e} pixel {i}: {z} vs {d}");
        }
    }
}

#[test]
fn align_reports_bad_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let err = cli::cmd_align(&small_config(), &empty, &tmp.path().join("out")).unwrap_err();
    assert!(matches!(err, CliError::Input(_)), "{err}");

    let scene = tmp.path().join("scene");
    cli::cmd_synth(&small_config(), &scene).unwrap();
    let victim = SceneDirectory::new(&scene).flow(&dynscene::graph::Edge::new(2, 4));
    std::fs::write(&victim, b"PMG1 truncated").unwrap();
    let err = cli::cmd_align(&small_config(), &scene, &tmp.path().join("out")).unwrap_err();
    assert!(err.to_string().contains("0002_0004.pmg"), "{err}");
}

#[test]
fn align_with_zero_iterations_emits_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = small_config();
    let scene = tmp.path().join("scene");
    cli::cmd_synth(&config, &scene).unwrap();
    config.schedule.iterations = 0;
    let out = tmp.path().join("out");
    let summary = cli::cmd_align(&config, &scene, &out).unwrap();
    assert_eq!(summary.iterations, 0);
    let trace = std::fs::read_to_string(out.join("loss.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2);
    for name in ["trajectory.tum", "intrinsics.txt", "points.ply", "depth/0007.pmg", "masks/0000_0001.pmg"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let cloud = cli::read_ply(&out.join("points.ply")).unwrap();
    assert_eq!(cloud.len(), 8 * 24 * 32);
    // The initialization is already close for exact inputs.
    let report = cli::cmd_eval_pose(&out.join("trajectory.tum"), &SceneDirectory::new(&scene).poses(), 1).unwrap();
    assert!(report.ate < 1e-3, "{report:?}");
}

fn write_trajectory(path: &Path, poses: &[PoseSE3]) {
    let records: Vec<TumRecord> = poses.iter().enumerate().map(|(i, p)| TumRecord::from_pose(i as f64, p)).collect();
    cli::write_tum(path, &records).unwrap();
}

fn wobbly_path(n: usize) -> Vec<PoseSE3> {
    (0..n)
        .map(|i| {
            let t = i as f64;
            PoseSE3::from_axis_angle(
                &Vector3::new(0.2, 1.0, 0.1),
                0.05 * t,
                Vector3::new(0.3 * t, (0.7 * t).sin(), 0.02 * t * t),
            )
        })
        .collect()
}

#[test]
fn eval_pose_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = wobbly_path(12);
    let gt_path = tmp.path().join("gt.tum");
    write_trajectory(&gt_path, &gt);
    let r = cli::cmd_eval_pose(&gt_path, &gt_path, 1).unwrap();
    assert!(r.ate < 1e-12 && r.rpe_trans < 1e-12 && r.rpe_rot_deg < 1e-9, "{r:?}");

    let sim = Sim3::new(
        3.0,
        PoseSE3::from_axis_angle(&Vector3::new(1.0, -1.0, 2.0), 1.1, Vector3::zeros()).rotation,
        Vector3::new(-4.0, 1.0, 2.0),
    )
    .unwrap();
    let moved: Vec<PoseSE3> = gt.iter().map(|p| sim.transform_pose(p)).collect();
    let moved_path = tmp.path().join("moved.tum");
    write_trajectory(&moved_path, &moved);
    let r = cli::cmd_eval_pose(&moved_path, &gt_path, 1).unwrap();
    assert!(r.ate < 1e-9 && r.rpe_trans < 1e-9 && r.rpe_rot_deg < 1e-5, "{r:?}");

    let short_path = tmp.path().join("short.tum");
    write_trajectory(&short_path, &gt[..10]);
    assert!(cli::cmd_eval_pose(&short_path, &gt_path, 1).is_err());

    let output = bin().args(["eval-pose"]).arg(&moved_path).arg(&gt_path).output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    let ate: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("ate = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(ate < 1e-9);
    let output = bin().args(["eval-pose"]).arg(&short_path).arg(&gt_path).output().unwrap();
    assert!(!output.status.success());
}

fn write_depths(dir: &Path, maps: &[DepthMap]) {
    for (t, d) in maps.iter().enumerate() {
        GridContainer::from_depth(d).write(&dir.join(cli::frame_file_name(t))).unwrap();
    }
}

#[test]
fn eval_depth_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    cli::cmd_synth(&small_config(), &scene).unwrap();
    let gt_dir = SceneDirectory::new(&scene).depth_dir();
    let r = cli::cmd_eval_depth(&gt_dir, &gt_dir, DepthAlignmentMode::ScaleShift).unwrap();
    assert!(r.abs_rel < 1e-6 && r.delta_125 == 1.0, "{r:?}");

    let scaled_dir = tmp.path().join("scaled");
    let gt: Vec<DepthMap> = (0..8)
        .map(|t| GridContainer::read(&gt_dir.join(cli::frame_file_name(t))).unwrap().to_depth().unwrap())
        .collect();
    let scaled: Vec<DepthMap> = gt
        .iter()
        .map(|d| DepthMap::new(d.depth.map(|x| 1.3 * x), d.valid.clone()).unwrap())
        .collect();
    write_depths(&scaled_dir, &scaled);
    let r = cli::cmd_eval_depth(&scaled_dir, &gt_dir, DepthAlignmentMode::Scale).unwrap();
    assert!(r.abs_rel < 1e-6, "{r:?}");
    let r = cli::cmd_eval_depth(&scaled_dir, &gt_dir, DepthAlignmentMode::None).unwrap();
    assert!((r.abs_rel - 0.3).abs() < 1e-6 && r.delta_125 == 0.0, "{r:?}");

    let output = bin()
        .args(["eval-depth", "--align", "none"])
        .arg(&scaled_dir)
        .arg(&gt_dir)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8(output.stdout).unwrap().contains("align = none"));
    let output = bin().args(["eval-depth", "--align", "bogus"]).arg(&scaled_dir).arg(&gt_dir).output().unwrap();
    assert!(!output.status.success());
}

#[test]
fn mask_flags_the_moving_object() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = small_config();
    config.scene.moving_sphere = Some([2.0, 0.35, 0.3, 6.0]);
    let scene = tmp.path().join("scene");
    cli::cmd_synth(&config, &scene).unwrap();
    let dir = SceneDirectory::new(&scene);
    let edge = dynscene::graph::Edge::new(2, 4);
    let out = tmp.path().join("mask.pmg");
    let summary = cli::cmd_mask(&dir.pair_self(&edge), &dir.pair_other(&edge), &dir.flow(&edge), None, &config, &out).unwrap();
    let is_static = GridContainer::read(&out).unwrap().to_bools().unwrap();
    let truth = GridContainer::read(&dir.dynamic_mask(2)).unwrap().to_bools().unwrap();
    let flow = GridContainer::read(&dir.flow(&edge)).unwrap().to_flow().unwrap();
    let (mut inter, mut union) = (0, 0);
    for i in 0..truth.as_slice().len() {
        if flow.valid.as_slice()[i] {
            let (t, p) = (truth.as_slice()[i], !is_static.as_slice()[i]);
            inter += (t && p) as usize;
            union += (t || p) as usize;
        }
    }
    assert!(union > 0 && inter as f64 / union as f64 > 0.8, "{inter}/{union}");
    assert!((summary.focal - 26.0).abs() < 1e-3);
}

#[test]
fn binary_usage_and_convert() {
    let tmp = tempfile::tempdir().unwrap();
    let output = bin().arg("synth").output().unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8(output.stderr).unwrap().contains("missing output"));

    let config = tmp.path().join("run.cfg");
    std::fs::write(&config, small_config().to_text()).unwrap();
    let scene = tmp.path().join("scene");
    let status = bin().arg("--config").arg(&config).args(["--seed", "3", "synth"]).arg(&scene).status().unwrap();
    assert!(status.success());
    let written = RunConfig::load(&scene.join("config.txt")).unwrap();
    assert_eq!(written.seed, 3);

    std::fs::write(&config, "window = 3\nbogus = 1\n").unwrap();
    let output = bin().arg("--config").arg(&config).arg("synth").arg(tmp.path().join("x")).output().unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8(output.stderr).unwrap().contains("bogus"));

    let depth = SceneDirectory::new(&scene).depth(0);
    let csv = tmp.path().join("d.csv");
    let back = tmp.path().join("d.pmg");
    assert!(bin().arg("convert").arg(&depth).arg(&csv).status().unwrap().success());
    assert!(bin().arg("convert").arg(&csv).arg(&back).status().unwrap().success());
    assert_eq!(std::fs::read(&depth).unwrap(), std::fs::read(&back).unwrap());
}
