use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::align_mode_name;
use super::{
    grid_from_csv, grid_to_csv, loss_trace_csv, read_text, read_trajectory, write_file, write_ply,
    write_tum, CliError, ColoredPoint, GridContainer, RunConfig, TumRecord,
};
use crate::evalkit::{ate, evaluate_depth, rpe, DepthAlignmentMode, DepthEvalReport};
use crate::geom::{pointmap_from_depth, DepthMap, Grid, ImageSize, Intrinsics, PoseSE3};
use crate::graph::{build_window_graph, Edge};
use crate::optim::run_global_optimization;
use crate::oracle::render_sequence;
use crate::pairwise::{
    default_alpha, estimate_focal, estimate_relative_pose, induced_flow, static_mask, PairEstimate,
};

pub fn frame_file_name(t: usize) -> String {
    format!("{t:04}.pmg")
}

pub fn edge_file_stem(edge: &Edge) -> String {
    format!("{:04}_{:04}", edge.from, edge.to)
}

/// File layout shared by `synth` (which writes it) and `align` (which reads
/// it).
#[derive(Debug, Clone)]
pub struct SceneDirectory {
    pub root: PathBuf,
}

impl SceneDirectory {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn intrinsics(&self) -> PathBuf {
        self.root.join("intrinsics.txt")
    }

    /// Ground-truth camera-to-world poses.
    pub fn poses(&self) -> PathBuf {
        self.root.join("poses_gt.tum")
    }

    pub fn depth(&self, t: usize) -> PathBuf {
        self.root.join("depth_gt").join(frame_file_name(t))
    }

    pub fn depth_dir(&self) -> PathBuf {
        self.root.join("depth_gt")
    }

    /// Ground-truth moving-object pixels.
    pub fn dynamic_mask(&self, t: usize) -> PathBuf {
        self.root.join("dynamic_gt").join(frame_file_name(t))
    }

    /// `x y z confidence` of frame `from` in camera `from`.
    pub fn pair_self(&self, edge: &Edge) -> PathBuf {
        self.root.join("pairs").join(format!("{}.self.pmg", edge_file_stem(edge)))
    }

    /// `x y z confidence` of frame `to` in camera `from`.
    pub fn pair_other(&self, edge: &Edge) -> PathBuf {
        self.root.join("pairs").join(format!("{}.other.pmg", edge_file_stem(edge)))
    }

    pub fn flow(&self, edge: &Edge) -> PathBuf {
        self.root.join("flows").join(format!("{}.pmg", edge_file_stem(edge)))
    }
}

fn intrinsics_text(intrinsics: &[Intrinsics]) -> String {
    let k0 = &intrinsics[0];
    let mut out = format!(
        "frames = {}\nheight = {}\nwidth = {}\ncx = {:?}\ncy = {:?}\n",
        intrinsics.len(),
        k0.size.height,
        k0.size.width,
        k0.cx,
        k0.cy
    );
    for (t, k) in intrinsics.iter().enumerate() {
        writeln!(out, "focal.{t} = {:?}", k.focal).unwrap();
    }
    out
}

/// Frame count and image size from an intrinsics file.
fn read_frame_layout(path: &Path) -> Result<(usize, ImageSize), CliError> {
    let text = read_text(path)?;
    let mut values = BTreeMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            values.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &str| -> Result<usize, CliError> {
        values
            .get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Format {
                path: Some(path.to_path_buf()),
                message: format!("missing or invalid `{k}`"),
            })
    };
    let size = ImageSize::new(get("height")?, get("width")?).map_err(|e| CliError::from(e).at(path))?;
    Ok((get("frames")?, size))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub frames: usize,
    pub edges: usize,
    pub dynamic_fraction: f64,
}

/// Renders the configured scene and writes pairwise inputs, flows and
/// ground truth under `out`.
pub fn cmd_synth(config: &RunConfig, out: &Path) -> Result<SynthSummary, CliError> {
    let spec = config.scene.build(config.seed)?;
    let graph = build_window_graph(spec.num_frames, config.window, config.stride)?;
    let seq = render_sequence(&spec, &graph)?;
    let dir = SceneDirectory::new(out);
    write_file(&dir.config(), config.to_text().as_bytes())?;
    let intrinsics: Vec<Intrinsics> = seq.frames.iter().map(|f| f.intrinsics).collect();
    write_file(&dir.intrinsics(), intrinsics_text(&intrinsics).as_bytes())?;
    let records: Vec<TumRecord> = seq
        .frames
        .iter()
        .enumerate()
        .map(|(t, f)| TumRecord::from_pose(t as f64, &f.pose.inverse()))
        .collect();
    write_tum(&dir.poses(), &records)?;
    let mut dynamic = 0usize;
    for (t, frame) in seq.frames.iter().enumerate() {
        GridContainer::from_depth(&frame.depth).write(&dir.depth(t))?;
        GridContainer::from_bools(&frame.dynamic_mask).write(&dir.dynamic_mask(t))?;
        dynamic += frame.dynamic_mask.as_slice().iter().filter(|&&d| d).count();
    }
    for e in &seq.edges {
        let p = &e.pair;
        GridContainer::from_pointmap_with_confidence(&p.pointmap_self, &p.conf_self).write(&dir.pair_self(&e.edge))?;
        GridContainer::from_pointmap_with_confidence(&p.pointmap_other, &p.conf_other)
            .write(&dir.pair_other(&e.edge))?;
        GridContainer::from_flow(&e.flow).write(&dir.flow(&e.edge))?;
    }
    let pixels = spec.num_frames * spec.resolution.num_pixels();
    info!("synth: {} frames, {} edges written to {}", spec.num_frames, graph.edges.len(), out.display());
    Ok(SynthSummary {
        frames: spec.num_frames,
        edges: graph.edges.len(),
        dynamic_fraction: dynamic as f64 / pixels as f64,
    })
}

fn read_pair(self_path: &Path, other_path: &Path, edge: Edge) -> Result<PairEstimate, CliError> {
    let (pm_self, conf_self) = GridContainer::read(self_path)?
        .to_pointmap_with_confidence()
        .map_err(|e| e.at(self_path))?;
    let (pm_other, conf_other) = GridContainer::read(other_path)?
        .to_pointmap_with_confidence()
        .map_err(|e| e.at(other_path))?;
    PairEstimate::new((edge.from, edge.to), pm_self, pm_other, conf_self, conf_other)
        .map_err(|e| CliError::from(e).at(other_path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignSummary {
    pub frames: usize,
    pub edges: usize,
    pub iterations: usize,
    pub final_loss: f64,
    pub failed_edges: Vec<Edge>,
}

/// Reads a scene directory, runs the global optimization and writes the
/// trajectory, depth, masks, intrinsics, a fused point cloud and the loss
/// trace under `out`.
pub fn cmd_align(config: &RunConfig, input: &Path, out: &Path) -> Result<AlignSummary, CliError> {
    if !input.is_dir() {
        return Err(CliError::Input(format!("{} is not a directory", input.display())));
    }
    let dir = SceneDirectory::new(input);
    let intrinsics_path = dir.intrinsics();
    if !intrinsics_path.exists() {
        return Err(CliError::Input(format!(
            "{} not found; expected a directory written by `synth`",
            intrinsics_path.display()
        )));
    }
    let (frames, size) = read_frame_layout(&intrinsics_path)?;
    let graph = build_window_graph(frames, config.window, config.stride)?;
    let mut pairs = BTreeMap::new();
    let mut flows = BTreeMap::new();
    for &edge in &graph.edges {
        pairs.insert(edge, read_pair(&dir.pair_self(&edge), &dir.pair_other(&edge), edge)?);
        let flow_path = dir.flow(&edge);
        let flow = GridContainer::read(&flow_path)?.to_flow().map_err(|e| e.at(&flow_path))?;
        if flow.size() != size {
            return Err(CliError::Format {
                path: Some(flow_path),
                message: "flow size differs from intrinsics".into(),
            });
        }
        flows.insert(edge, flow);
    }
    let alpha = config.alpha_for(size);
    info!(
        "align: {frames} frames, {} edges, {} iterations, alpha {alpha:.3}",
        graph.edges.len(),
        config.schedule.iterations
    );
    let result = run_global_optimization(&graph, &pairs, &flows, &config.schedule, &config.ransac, alpha, config.seed)?;
    for e in &result.failed_edges {
        warn!("edge {e}: relative pose estimation failed");
    }

    let records: Vec<TumRecord> = result
        .poses
        .iter()
        .enumerate()
        .map(|(t, p)| TumRecord::from_pose(t as f64, &p.inverse()))
        .collect();
    write_tum(&out.join("trajectory.tum"), &records)?;
    write_file(&out.join("intrinsics.txt"), intrinsics_text(&result.intrinsics).as_bytes())?;
    for (t, d) in result.depths.iter().enumerate() {
        GridContainer::from_depth(d).write(&out.join("depth").join(frame_file_name(t)))?;
    }
    for (edge, mask) in &result.masks {
        GridContainer::from_static_mask(mask).write(&out.join("masks").join(format!("{}.pmg", edge_file_stem(edge))))?;
    }
    let cloud = fused_cloud(&result.depths, &result.intrinsics, &result.poses, |t| {
        result.masks.iter().find(|(e, _)| e.from == t).map(|(_, m)| &m.is_static)
    })?;
    write_ply(&out.join("points.ply"), &cloud)?;
    write_file(&out.join("loss.csv"), loss_trace_csv(&result.trace).as_bytes())?;
    Ok(AlignSummary {
        frames,
        edges: graph.edges.len(),
        iterations: config.schedule.iterations,
        final_loss: result.trace.last().map_or(f64::NAN, |r| r.total),
        failed_edges: result.failed_edges,
    })
}

/// World points of every valid pixel; static pixels grey, shaded by depth,
/// dynamic ones red.
fn fused_cloud<'a>(
    depths: &[DepthMap],
    intrinsics: &[Intrinsics],
    poses: &[PoseSE3],
    static_mask: impl Fn(usize) -> Option<&'a Grid<bool>>,
) -> Result<Vec<ColoredPoint>, CliError> {
    let mut cloud = Vec::new();
    for t in 0..depths.len() {
        let pm = pointmap_from_depth(&depths[t], &intrinsics[t], &poses[t])?;
        let mask = static_mask(t);
        let max_depth = depths[t]
            .depth
            .as_slice()
            .iter()
            .zip(depths[t].valid.as_slice())
            .filter(|(_, &v)| v)
            .fold(0.0f64, |m, (&d, _)| m.max(d));
        for (i, x) in pm.valid_points() {
            let shade = (255.0 * (1.0 - 0.7 * depths[t].depth.as_slice()[i] / max_depth)) as u8;
            let is_static = mask.is_none_or(|m| m.as_slice()[i]);
            cloud.push(ColoredPoint {
                position: [x.x as f32, x.y as f32, x.z as f32],
                color: if is_static { [shade; 3] } else { [230, 40, 40] },
            });
        }
    }
    Ok(cloud)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseReport {
    pub frames: usize,
    pub delta: usize,
    pub ate: f64,
    pub rpe_trans: f64,
    pub rpe_rot_deg: f64,
}

impl PoseReport {
    pub fn to_text(&self) -> String {
        format!(
            "frames = {}\ndelta = {}\nate = {:?}\nrpe_trans = {:?}\nrpe_rot_deg = {:?}\n",
            self.frames, self.delta, self.ate, self.rpe_trans, self.rpe_rot_deg
        )
    }
}

/// ATE and RPE between two TUM trajectories of equal length.
pub fn cmd_eval_pose(pred: &Path, gt: &Path, delta: usize) -> Result<PoseReport, CliError> {
    let pred_traj = read_trajectory(pred)?;
    let gt_traj = read_trajectory(gt)?;
    let r = rpe(&pred_traj, &gt_traj, delta)?;
    Ok(PoseReport {
        frames: pred_traj.len(),
        delta,
        ate: ate(&pred_traj, &gt_traj)?,
        rpe_trans: r.trans,
        rpe_rot_deg: r.rot_deg,
    })
}

pub fn depth_report_text(report: &DepthEvalReport) -> String {
    let a = &report.alignment;
    let scales = a.scales.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>();
    let mut out = format!(
        "abs_rel = {:?}\ndelta_125 = {:?}\npixel_count = {}\nalign = {}\nshift = {:?}\n",
        report.abs_rel,
        report.delta_125,
        report.pixel_count,
        align_mode_name(a.mode),
        a.shift
    );
    if a.mode == DepthAlignmentMode::PerFrameMedian {
        writeln!(out, "scales = {}", scales.join(" ")).unwrap();
    } else {
        writeln!(out, "scale = {}", scales.first().map_or("1.0", String::as_str)).unwrap();
    }
    out
}

fn pmg_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pmg"))
        .collect();
    files.sort();
    Ok(files)
}

/// Depth metrics between two directories of per-frame depth containers,
/// matched by file name.
pub fn cmd_eval_depth(pred_dir: &Path, gt_dir: &Path, mode: DepthAlignmentMode) -> Result<DepthEvalReport, CliError> {
    let pred_files = pmg_files(pred_dir)?;
    if pred_files.is_empty() {
        return Err(CliError::Input(format!("no .pmg files in {}", pred_dir.display())));
    }
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for p in &pred_files {
        let g = gt_dir.join(p.file_name().unwrap());
        if !g.exists() {
            return Err(CliError::Input(format!("{} has no counterpart {}", p.display(), g.display())));
        }
        pred.push(GridContainer::read(p)?.to_depth().map_err(|e| e.at(p))?);
        gt.push(GridContainer::read(&g)?.to_depth().map_err(|e| e.at(&g))?);
    }
    Ok(evaluate_depth(&pred, &gt, mode)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSummary {
    pub static_pixels: usize,
    pub pixels: usize,
    pub focal: f64,
    pub inliers: usize,
    pub alpha: f64,
}

impl MaskSummary {
    pub fn to_text(&self) -> String {
        format!(
            "static_pixels = {}\npixels = {}\nstatic_fraction = {:?}\nfocal = {:?}\ninliers = {}\nalpha = {:?}\n",
            self.static_pixels,
            self.pixels,
            self.static_pixels as f64 / self.pixels as f64,
            self.focal,
            self.inliers,
            self.alpha
        )
    }
}

/// Static mask of one pair: focal from the first pointmap, relative pose by
/// PnP, camera-induced flow compared against the estimated flow.
pub fn cmd_mask(
    pair_self: &Path,
    pair_other: &Path,
    flow: &Path,
    alpha: Option<f64>,
    config: &RunConfig,
    out: &Path,
) -> Result<MaskSummary, CliError> {
    let pair = read_pair(pair_self, pair_other, Edge::new(0, 1))?;
    let f_est = GridContainer::read(flow)?.to_flow().map_err(|e| e.at(flow))?;
    let size = pair.size();
    if f_est.size() != size {
        return Err(CliError::Format {
            path: Some(flow.to_path_buf()),
            message: "flow size differs from the pair".into(),
        });
    }
    let focal = estimate_focal(&pair.pointmap_self).map_err(|e| CliError::from(e).at(pair_self))?;
    let k = Intrinsics::centered(focal, size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rel = estimate_relative_pose(&pair, &k, &config.ransac, &mut rng)?;
    if rel.fallback {
        warn!("relative pose estimation failed; camera flow assumes no motion");
    }
    let depth = DepthMap::new(
        pair.pointmap_self.points.map(|p| p.z),
        pair.pointmap_self.valid.clone(),
    )?;
    let f_cam = induced_flow(&depth, &k, &k, &rel.pose)?;
    let alpha = alpha.or(config.alpha).unwrap_or_else(|| default_alpha(size));
    let mask = static_mask(&f_cam, &f_est, alpha)?;
    GridContainer::from_static_mask(&mask).write(out)?;
    Ok(MaskSummary {
        static_pixels: mask.num_static(),
        pixels: size.num_pixels(),
        focal,
        inliers: rel.inlier_count,
        alpha,
    })
}

/// `.pmg` → `.csv` or `.csv` → `.pmg`, chosen by the input extension.
pub fn cmd_convert(input: &Path, output: &Path) -> Result<(), CliError> {
    match input.extension().and_then(|e| e.to_str()) {
        Some("pmg") => write_file(output, grid_to_csv(&GridContainer::read(input)?).as_bytes()),
        Some("csv") => grid_from_csv(&read_text(input)?).map_err(|e| e.at(input))?.write(output),
        _ => Err(CliError::Usage(format!(
            "cannot convert {}: expected a .pmg or .csv file",
            input.display()
        ))),
    }
}
