//! Procedural synthetic dynamic scenes with exact ground truth.
//!
//! Depth comes from ray casting planes and spheres; moving spheres follow
//! rigid trajectories. For every requested edge the oracle emits the
//! pairwise pointmaps a perfect network would predict, the true optical
//! flow (invalid where the target is occluded) and the true relative pose.

mod scene;

pub use scene::{
    CameraPath, DynamicObject, DynamicPointmaps, NoiseSpec, ObjectMotion, SceneSpec, Surface,
};

use std::collections::BTreeMap;

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::geom::{
    ConfidenceMap, DepthMap, FlowField, GeomError, Grid, Intrinsics, Pointmap, PoseSE3, StaticMask,
};
use crate::graph::{Edge, VideoGraph};
use crate::optim::{EdgeVariables, FrameVariables, GlobalState};
use crate::pairwise::{PairEstimate, PairwiseError};

/// Rays start this far past the camera center (or a surface) to avoid
/// self-intersection.
const RAY_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid scene: {0}")]
    InvalidSpec(&'static str),
    #[error("ray through pixel ({u}, {v}) of frame {frame} hits nothing; add a background plane")]
    Uncovered { frame: usize, u: usize, v: usize },
    #[error("graph has {graph} frames but the scene has {scene}")]
    FrameCount { graph: usize, scene: usize },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Pairwise(#[from] PairwiseError),
}

/// Ground truth for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleFrame {
    /// World-to-camera.
    pub pose: PoseSE3,
    pub intrinsics: Intrinsics,
    pub depth: DepthMap,
    /// Pixels showing a moving object.
    pub dynamic_mask: Grid<bool>,
    /// Which dynamic object each pixel shows, if any.
    pub object: Grid<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleEdge {
    pub edge: Edge,
    pub pair: PairEstimate,
    /// True flow from frame `from` to frame `to`.
    pub flow: FlowField,
    /// Maps camera `from` coordinates to camera `to` coordinates.
    pub relative_pose: PoseSE3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSequence {
    pub spec: SceneSpec,
    pub graph: VideoGraph,
    pub frames: Vec<OracleFrame>,
    /// One entry per graph edge, in graph order.
    pub edges: Vec<OracleEdge>,
}

impl OracleSequence {
    pub fn pairs(&self) -> BTreeMap<Edge, PairEstimate> {
        self.edges.iter().map(|e| (e.edge, e.pair.clone())).collect()
    }

    pub fn flows(&self) -> BTreeMap<Edge, FlowField> {
        self.edges.iter().map(|e| (e.edge, e.flow.clone())).collect()
    }

    pub fn poses(&self) -> Vec<PoseSE3> {
        self.frames.iter().map(|f| f.pose).collect()
    }

    pub fn depths(&self) -> Vec<DepthMap> {
        self.frames.iter().map(|f| f.depth.clone()).collect()
    }

    pub fn edge(&self, edge: &Edge) -> Option<&OracleEdge> {
        self.edges.iter().find(|e| e.edge == *edge)
    }

    /// Optimization variables at the ground truth: true poses, depths and
    /// focals, unit edge scales, edge alignments taking each pair's camera
    /// frame to the world, and masks marking moving-object pixels dynamic.
    pub fn ground_truth_state(&self) -> GlobalState {
        let frames = self
            .frames
            .iter()
            .map(|f| FrameVariables::new(&f.pose, &f.depth.depth, f.intrinsics.focal))
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|e| (e.edge, EdgeVariables::new(&self.frames[e.edge.from].pose.inverse(), 0.0)))
            .collect();
        let masks = self
            .edges
            .iter()
            .map(|e| {
                let dynamic = &self.frames[e.edge.from].dynamic_mask;
                (e.edge, StaticMask { is_static: dynamic.map(|d| !d) })
            })
            .collect();
        GlobalState {
            frames,
            edges,
            graph: self.graph.clone(),
            masks,
        }
    }
}

struct Hit {
    lambda: f64,
    object: Option<usize>,
}

fn cast(spec: &SceneSpec, frame: usize, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    let mut consider = |lambda: Option<f64>, object: Option<usize>| {
        if let Some(l) = lambda {
            if best.as_ref().is_none_or(|b| l < b.lambda) {
                best = Some(Hit { lambda: l, object });
            }
        }
    };
    for s in &spec.static_surfaces {
        consider(s.intersect(origin, dir, RAY_EPS), None);
    }
    for (j, o) in spec.dynamic_objects.iter().enumerate() {
        consider(o.surface_at(frame).intersect(origin, dir, RAY_EPS), Some(j));
    }
    best
}

fn validate(spec: &SceneSpec) -> Result<(), OracleError> {
    if spec.num_frames == 0 {
        return Err(OracleError::InvalidSpec("no frames"));
    }
    if spec.static_surfaces.is_empty() && spec.dynamic_objects.is_empty() {
        return Err(OracleError::InvalidSpec("no surfaces"));
    }
    if !(spec.focal > 0.0 && spec.focal.is_finite()) {
        return Err(GeomError::InvalidFocal(spec.focal).into());
    }
    if spec.dynamic_objects.iter().any(|o| !(o.radius > 0.0)) {
        return Err(OracleError::InvalidSpec("dynamic sphere radius must be positive"));
    }
    let bad_sphere = spec.static_surfaces.iter().any(|s| match s {
        Surface::Sphere { radius, .. } => !(*radius > 0.0),
        Surface::Plane { normal, .. } => !(normal.norm() > 0.0),
    });
    if bad_sphere {
        return Err(OracleError::InvalidSpec("degenerate static surface"));
    }
    if let CameraPath::Keyframes(k) = &spec.camera_path {
        if k.is_empty() {
            return Err(OracleError::InvalidSpec("empty keyframe list"));
        }
    }
    if !(spec.noise.depth_sigma >= 0.0 && spec.noise.confidence_floor >= 0.0) {
        return Err(OracleError::InvalidSpec("noise parameters must be non-negative"));
    }
    Ok(())
}

fn render_frame(spec: &SceneSpec, t: usize) -> Result<OracleFrame, OracleError> {
    let k = spec.intrinsics();
    let size = spec.resolution;
    let pose = spec.camera_pose(t);
    let c2w = pose.inverse();
    let mut depth = Vec::with_capacity(size.num_pixels());
    let mut object = Vec::with_capacity(size.num_pixels());
    for v in 0..size.height {
        for u in 0..size.width {
            let n = k.normalize(&Vector2::new(u as f64, v as f64));
            let dir = c2w.rotation * Vector3::new(n.x, n.y, 1.0);
            let hit = cast(spec, t, &c2w.translation, &dir).ok_or(OracleError::Uncovered {
                frame: t,
                u,
                v,
            })?;
            depth.push(hit.lambda);
            object.push(hit.object);
        }
    }
    let object = Grid::from_vec(size, object)?;
    Ok(OracleFrame {
        pose,
        intrinsics: k,
        depth: DepthMap::from_values(Grid::from_vec(size, depth)?),
        dynamic_mask: object.map(|o| o.is_some()),
        object,
    })
}

/// World position of pixel `(u, v)` of `frame` scaled along its ray to
/// `depth`.
fn world_point(frame: &OracleFrame, u: usize, v: usize, depth: f64) -> Vector3<f64> {
    let n = frame.intrinsics.normalize(&Vector2::new(u as f64, v as f64));
    frame.pose.inverse().apply(&(Vector3::new(n.x, n.y, 1.0) * depth))
}

fn displacement(spec: &SceneSpec, object: Option<usize>, from: usize, to: usize) -> Vector3<f64> {
    match object {
        Some(j) => {
            let m = &spec.dynamic_objects[j].motion;
            m.position(to) - m.position(from)
        }
        None => Vector3::zeros(),
    }
}

fn true_flow(spec: &SceneSpec, frames: &[OracleFrame], edge: Edge) -> Result<FlowField, OracleError> {
    let (a, b) = (&frames[edge.from], &frames[edge.to]);
    let size = spec.resolution;
    let eye = b.pose.center();
    let mut flow = Vec::with_capacity(size.num_pixels());
    let mut valid = Vec::with_capacity(size.num_pixels());
    for v in 0..size.height {
        for u in 0..size.width {
            let obj = *a.object.get(u, v);
            let w = world_point(a, u, v, *a.depth.depth.get(u, v))
                + displacement(spec, obj, edge.from, edge.to);
            let q = b.pose.apply(&w);
            // Visible iff the first hit along the ray towards the moved point
            // is the point itself.
            let visible = q.z > 0.0
                && cast(spec, edge.to, &eye, &(w - eye))
                    .is_some_and(|h| h.lambda >= 1.0 - 1e-7);
            if visible {
                let p = b.intrinsics.focal * Vector2::new(q.x / q.z, q.y / q.z)
                    + Vector2::new(b.intrinsics.cx, b.intrinsics.cy);
                flow.push(p - Vector2::new(u as f64, v as f64));
                valid.push(true);
            } else {
                flow.push(Vector2::zeros());
                valid.push(false);
            }
        }
    }
    Ok(FlowField::new(Grid::from_vec(size, flow)?, Grid::from_vec(size, valid)?)?)
}

fn edge_seed(seed: u64, edge: Edge) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((edge.from as u64) << 32 | edge.to as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Noisy depths of one frame and the matching confidences.
fn noisy_depth<R: rand::Rng>(frame: &OracleFrame, noise: &NoiseSpec, rng: &mut R) -> (Grid<f64>, Grid<f64>) {
    let d = &frame.depth.depth;
    let mut depth = Vec::with_capacity(d.as_slice().len());
    let mut conf = Vec::with_capacity(d.as_slice().len());
    for &z in d.as_slice() {
        let n = if noise.depth_sigma > 0.0 {
            let g: f64 = StandardNormal.sample(rng);
            noise.depth_sigma * z * g
        } else {
            0.0
        };
        depth.push(z + n);
        conf.push((1.0 / (1.0 + n.abs() / z)).max(noise.confidence_floor));
    }
    (Grid::from_vec(d.size(), depth).unwrap(), Grid::from_vec(d.size(), conf).unwrap())
}

fn build_pair(spec: &SceneSpec, frames: &[OracleFrame], edge: Edge) -> Result<OracleEdge, OracleError> {
    let (a, b) = (&frames[edge.from], &frames[edge.to]);
    let size = spec.resolution;
    let relative_pose = b.pose.compose(&a.pose.inverse());
    let to_self = relative_pose.inverse();
    let mut rng = ChaCha8Rng::seed_from_u64(edge_seed(spec.seed, edge));
    let (depth_a, conf_a) = noisy_depth(a, &spec.noise, &mut rng);
    let (depth_b, conf_b) = noisy_depth(b, &spec.noise, &mut rng);

    let camera_point = |frame: &OracleFrame, u: usize, v: usize, z: f64| {
        let n = frame.intrinsics.normalize(&Vector2::new(u as f64, v as f64));
        Vector3::new(n.x, n.y, 1.0) * z
    };
    let valid_a = depth_a.map(|&z| z > 0.0);
    let valid_b = depth_b.map(|&z| z > 0.0);
    let self_points = Grid::from_fn(size, |u, v| camera_point(a, u, v, *depth_a.get(u, v)));
    let other_points = Grid::from_fn(size, |u, v| {
        let x = camera_point(b, u, v, *depth_b.get(u, v));
        match (spec.dynamic_pointmaps, *b.object.get(u, v)) {
            (DynamicPointmaps::Frozen, obj @ Some(_)) => {
                let w = b.pose.inverse().apply(&x) - displacement(spec, obj, edge.from, edge.to);
                a.pose.apply(&w)
            }
            _ => to_self.apply(&x),
        }
    });
    let pair = PairEstimate::new(
        (edge.from, edge.to),
        Pointmap::new(self_points, valid_a)?,
        Pointmap::new(other_points, valid_b)?,
        ConfidenceMap::new(conf_a)?,
        ConfidenceMap::new(conf_b)?,
    )?;
    Ok(OracleEdge {
        edge,
        pair,
        flow: true_flow(spec, frames, edge)?,
        relative_pose,
    })
}

/// Renders ground truth for every frame of `spec` and every edge of `graph`.
pub fn render_sequence(spec: &SceneSpec, graph: &VideoGraph) -> Result<OracleSequence, OracleError> {
    validate(spec)?;
    if graph.num_frames != spec.num_frames {
        return Err(OracleError::FrameCount {
            graph: graph.num_frames,
            scene: spec.num_frames,
        });
    }
    let frames = (0..spec.num_frames)
        .map(|t| render_frame(spec, t))
        .collect::<Result<Vec<_>, _>>()?;
    let edges = graph
        .edges
        .iter()
        .map(|&e| build_pair(spec, &frames, e))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(OracleSequence {
        spec: spec.clone(),
        graph: graph.clone(),
        frames,
        edges,
    })
}

/// Regenerates the pairwise predictions of `seq` with fresh depth noise.
/// Ground-truth frames and flows are kept.
pub fn perturb(seq: &OracleSequence, noise: NoiseSpec, seed: u64) -> Result<OracleSequence, OracleError> {
    let spec = SceneSpec {
        noise,
        seed,
        ..seq.spec.clone()
    };
    validate(&spec)?;
    let edges = seq
        .edges
        .iter()
        .map(|e| {
            let rebuilt = build_pair(&spec, &seq.frames, e.edge)?;
            Ok(OracleEdge {
                pair: rebuilt.pair,
                ..e.clone()
            })
        })
        .collect::<Result<Vec<_>, OracleError>>()?;
    Ok(OracleSequence {
        spec,
        graph: seq.graph.clone(),
        frames: seq.frames.clone(),
        edges,
    })
}
