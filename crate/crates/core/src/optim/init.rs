use std::collections::BTreeMap;

use log::warn;
use rand::Rng;

use super::state::{EdgeVariables, FrameVariables, GlobalState};
use super::OptimError;
use crate::geom::{
    depth_from_pointmap, fit_similarity, pointmap_from_depth, DepthMap, FlowField, Grid, Intrinsics, PoseSE3,
};
use crate::graph::{Edge, VideoGraph};
use crate::pairwise::{
    estimate_focal, estimate_relative_pose, induced_flow, static_mask, PairEstimate, RansacParams,
    RelativePoseResult,
};
use crate::stats::median;

/// Per-frame focals and per-edge relative poses from the pairwise stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseOutputs {
    pub focals: BTreeMap<usize, f64>,
    pub poses: BTreeMap<Edge, RelativePoseResult>,
}

impl PairwiseOutputs {
    /// Edges whose pose estimation failed and carry an identity placeholder.
    pub fn failed_edges(&self) -> Vec<Edge> {
        self.poses.iter().filter(|(_, r)| r.fallback).map(|(e, _)| *e).collect()
    }
}

/// Runs focal estimation on every `pointmap_self` and RANSAC-PnP on every
/// edge, in graph order so a seeded `rng` gives reproducible output.
///
/// A frame's focal is the median over the edges where it is the first frame;
/// frames that never are (typically the last one) borrow the nearest
/// frame's value. PnP uses the focal of the edge's second frame. Edges whose
/// pose estimation fails get an identity placeholder and a warning.
pub fn estimate_pairwise<R: Rng + ?Sized>(
    graph: &VideoGraph,
    pairs: &BTreeMap<Edge, PairEstimate>,
    ransac: &RansacParams,
    rng: &mut R,
) -> Result<PairwiseOutputs, OptimError> {
    let mut per_frame: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for edge in &graph.edges {
        let pair = pairs.get(edge).ok_or(OptimError::MissingPair(*edge))?;
        match estimate_focal(&pair.pointmap_self) {
            Ok(f) => per_frame.entry(edge.from).or_default().push(f),
            Err(e) => warn!("focal estimation failed on edge {edge}: {e}"),
        }
    }
    let known: BTreeMap<usize, f64> = per_frame
        .into_iter()
        .map(|(t, mut v)| (t, median(&mut v)))
        .collect();
    if known.is_empty() {
        return Err(OptimError::NoFocal);
    }
    let focals: BTreeMap<usize, f64> = (0..graph.num_frames)
        .map(|t| {
            let nearest = known
                .iter()
                .min_by_key(|(s, _)| (s.abs_diff(t), **s))
                .map(|(_, f)| *f)
                .expect("non-empty");
            (t, nearest)
        })
        .collect();

    let mut poses = BTreeMap::new();
    for edge in &graph.edges {
        let pair = &pairs[edge];
        let k_other = Intrinsics::centered(focals[&edge.to], pair.size())?;
        let result = match estimate_relative_pose(pair, &k_other, ransac, rng) {
            Ok(r) => r,
            Err(e) => {
                warn!("pose estimation failed on edge {edge}: {e}; using identity");
                RelativePoseResult::fallback_identity(pair.size())
            }
        };
        poses.insert(*edge, result);
    }
    Ok(PairwiseOutputs { focals, poses })
}

fn positive_median_ratio(num: &DepthMap, den: &DepthMap) -> Option<f64> {
    let mut ratios: Vec<f64> = num
        .depth
        .as_slice()
        .iter()
        .zip(num.valid.as_slice())
        .zip(den.depth.as_slice().iter().zip(den.valid.as_slice()))
        .filter(|((_, &a), (_, &b))| a && b)
        .map(|((x, _), (y, _))| x / y)
        .collect();
    (!ratios.is_empty()).then(|| median(&mut ratios))
}

/// Replaces invalid depths by the median valid depth so the log is defined.
fn filled(depth: &DepthMap, scale: f64) -> Grid<f64> {
    let mut valid: Vec<f64> = depth
        .depth
        .as_slice()
        .iter()
        .zip(depth.valid.as_slice())
        .filter(|(_, &ok)| ok)
        .map(|(d, _)| *d)
        .collect();
    let fill = if valid.is_empty() { 1.0 } else { median(&mut valid) };
    Grid::from_fn(depth.size(), |u, v| {
        scale * if *depth.valid.get(u, v) { *depth.depth.get(u, v) } else { fill }
    })
}

fn scaled_translation(pose: &PoseSE3, s: f64) -> PoseSE3 {
    PoseSE3 {
        rotation: pose.rotation,
        translation: pose.translation * s,
    }
}

/// Builds the starting point of the global optimization.
///
/// Poses chain the adjacent-edge relative poses from frame 0, each rescaled
/// so the pair's depth of the earlier frame matches the depth already
/// assigned to it. An adjacent edge with a failed pose is bridged through
/// another successful edge ending at the same frame, or else repeats the
/// previous pose; both cases log a warning. Depth of frame 0 comes from edge
/// `(0, 1)`; later frames take the second pointmap of `(t − 1, t)`. Masks
/// compare the induced flow of the initial variables against `flows` with
/// threshold `alpha`; edge alignments are rigid fits of `pointmap_self` onto
/// the initial global pointmap over static pixels, with unit scale.
pub fn init_global_state(
    graph: &VideoGraph,
    pairs: &BTreeMap<Edge, PairEstimate>,
    poses: &BTreeMap<Edge, RelativePoseResult>,
    focals: &BTreeMap<usize, f64>,
    flows: &BTreeMap<Edge, FlowField>,
    alpha: f64,
) -> Result<GlobalState, OptimError> {
    let n = graph.num_frames;
    if n < 2 {
        return Err(OptimError::TooFewFrames(n));
    }
    let missing = graph.missing_adjacent_edges();
    if !missing.is_empty() {
        return Err(OptimError::MissingAdjacentEdges(missing));
    }
    for edge in &graph.edges {
        if !pairs.contains_key(edge) {
            return Err(OptimError::MissingPair(*edge));
        }
        if !flows.contains_key(edge) {
            return Err(OptimError::MissingFlow(*edge));
        }
        if !poses.contains_key(edge) {
            return Err(OptimError::MissingPose(*edge));
        }
    }
    let size = pairs[&graph.edges[0]].size();
    if let Some(e) = graph.edges.iter().find(|e| pairs[*e].size() != size || flows[*e].size() != size) {
        return Err(OptimError::SizeMismatch(*e));
    }
    let intrinsics: Vec<Intrinsics> = (0..n)
        .map(|t| {
            let f = focals.get(&t).ok_or(OptimError::MissingFocal(t))?;
            Ok(Intrinsics::centered(*f, size)?)
        })
        .collect::<Result<_, OptimError>>()?;

    let usable = |e: &Edge| poses.get(e).is_some_and(|r| !r.fallback);
    let mut world_to_cam = vec![PoseSE3::identity()];
    let mut depths = vec![depth_from_pointmap(
        &pairs[&Edge::new(0, 1)].pointmap_self,
        &PoseSE3::identity(),
    )];
    for t in 0..n - 1 {
        let next = t + 1;
        let source = if usable(&Edge::new(t, next)) {
            Some(t)
        } else {
            let bridge = (0..t).rev().find(|&s| graph.contains(&Edge::new(s, next)) && usable(&Edge::new(s, next)));
            match bridge {
                Some(s) => warn!("edge ({t}, {next}) has no pose; bridging through ({s}, {next})"),
                None => warn!("edge ({t}, {next}) has no pose and no bridge; frame {next} copies frame {t}"),
            }
            bridge
        };
        match source {
            Some(s) => {
                let edge = Edge::new(s, next);
                let pair = &pairs[&edge];
                let rel = poses[&edge].pose;
                let own = depth_from_pointmap(&pair.pointmap_self, &PoseSE3::identity());
                let scale = positive_median_ratio(&depths[s], &own).unwrap_or(1.0);
                let rel = scaled_translation(&rel, scale);
                world_to_cam.push(rel.compose(&world_to_cam[s]));
                let d = depth_from_pointmap(&pair.pointmap_other, &rel);
                let d = DepthMap::new(d.depth.map(|z| z * scale), d.valid)?;
                depths.push(d);
            }
            None => {
                let pair = &pairs[&Edge::new(t, next)];
                world_to_cam.push(world_to_cam[t]);
                depths.push(depth_from_pointmap(&pair.pointmap_other, &PoseSE3::identity()));
            }
        }
    }

    let frames: Vec<FrameVariables> = (0..n)
        .map(|t| FrameVariables::new(&world_to_cam[t], &filled(&depths[t], 1.0), intrinsics[t].focal))
        .collect();
    let frame_depths: Vec<DepthMap> = frames.iter().map(FrameVariables::depth).collect();

    let mut masks = BTreeMap::new();
    for edge in &graph.edges {
        let (a, b) = (edge.from, edge.to);
        let rel = world_to_cam[b].compose(&world_to_cam[a].inverse());
        let f_cam = induced_flow(&frame_depths[a], &intrinsics[a], &intrinsics[b], &rel)?;
        masks.insert(*edge, static_mask(&f_cam, &flows[edge], alpha)?);
    }

    let mut edges = BTreeMap::new();
    for edge in &graph.edges {
        let a = edge.from;
        let global = pointmap_from_depth(&frame_depths[a], &intrinsics[a], &world_to_cam[a])?;
        let pair = &pairs[edge];
        let fit = |static_only: bool| {
            let mut src = Vec::new();
            let mut dst = Vec::new();
            let mut w = Vec::new();
            for (p, y) in pair.pointmap_self.valid_points() {
                if static_only && !masks[edge].is_static.as_slice()[p] {
                    continue;
                }
                src.push(*y);
                dst.push(global.points.as_slice()[p]);
                w.push(pair.conf_self.values.as_slice()[p]);
            }
            fit_similarity(&src, &dst, Some(&w), false)
        };
        let align = match fit(true).or_else(|_| fit(false)) {
            Ok(f) => PoseSE3 {
                rotation: f.transform.rotation,
                translation: f.transform.translation,
            },
            Err(e) => {
                warn!("alignment fit failed on edge {edge}: {e}; using the frame pose");
                world_to_cam[a].inverse()
            }
        };
        edges.insert(*edge, EdgeVariables::new(&align, 0.0));
    }

    let mut state = GlobalState {
        frames,
        edges,
        graph: graph.clone(),
        masks,
    };
    state.project_gauge();
    Ok(state)
}
