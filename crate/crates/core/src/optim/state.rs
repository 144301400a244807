use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};

use crate::geom::{
    quat_to_rotation, rotation_to_quat, DepthMap, Grid, ImageSize, Intrinsics, PoseSE3, StaticMask,
};
use crate::graph::{Edge, VideoGraph};

/// Camera and depth variables of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameVariables {
    /// World-to-camera rotation as `[w, x, y, z]`; renormalized after every step.
    pub quaternion: [f64; 4],
    pub translation: Vector3<f64>,
    pub log_depth: Grid<f64>,
    pub log_focal: f64,
}

impl FrameVariables {
    pub fn new(pose: &PoseSE3, depth: &Grid<f64>, focal: f64) -> Self {
        Self {
            quaternion: rotation_to_quat(&pose.rotation),
            translation: pose.translation,
            log_depth: depth.map(|d| d.ln()),
            log_focal: focal.ln(),
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        quat_to_rotation(&self.quaternion)
    }

    pub fn pose(&self) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation(),
            translation: self.translation,
        }
    }

    pub fn focal(&self) -> f64 {
        self.log_focal.exp()
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::centered(self.focal(), self.log_depth.size()).expect("exp is positive")
    }

    pub fn depth(&self) -> DepthMap {
        DepthMap::from_values(self.log_depth.map(|l| l.exp()))
    }
}

/// Per-edge scale and rigid alignment of the pairwise pointmaps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeVariables {
    pub log_scale: f64,
    pub quaternion: [f64; 4],
    pub translation: Vector3<f64>,
}

impl EdgeVariables {
    pub fn new(align: &PoseSE3, log_scale: f64) -> Self {
        Self {
            log_scale,
            quaternion: rotation_to_quat(&align.rotation),
            translation: align.translation,
        }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn align_pose(&self) -> PoseSE3 {
        PoseSE3 {
            rotation: quat_to_rotation(&self.quaternion),
            translation: self.translation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    pub frames: Vec<FrameVariables>,
    pub edges: BTreeMap<Edge, EdgeVariables>,
    pub graph: VideoGraph,
    pub masks: BTreeMap<Edge, StaticMask>,
}

impl GlobalState {
    pub fn size(&self) -> ImageSize {
        self.frames[0].log_depth.size()
    }

    pub fn poses(&self) -> Vec<PoseSE3> {
        self.frames.iter().map(FrameVariables::pose).collect()
    }

    pub fn depths(&self) -> Vec<DepthMap> {
        self.frames.iter().map(FrameVariables::depth).collect()
    }

    pub fn intrinsics(&self) -> Vec<Intrinsics> {
        self.frames.iter().map(FrameVariables::intrinsics).collect()
    }

    /// Re-imposes the gauge: frame 0 at the identity, zero-mean log scales
    /// and unit quaternions.
    pub fn project_gauge(&mut self) {
        let f0 = &mut self.frames[0];
        f0.quaternion = [1.0, 0.0, 0.0, 0.0];
        f0.translation = Vector3::zeros();
        for f in &mut self.frames {
            normalize_quat(&mut f.quaternion);
        }
        let mean = if self.edges.is_empty() {
            0.0
        } else {
            self.edges.values().map(|e| e.log_scale).sum::<f64>() / self.edges.len() as f64
        };
        for e in self.edges.values_mut() {
            e.log_scale -= mean;
            normalize_quat(&mut e.quaternion);
        }
    }

    pub fn layout(&self) -> Layout {
        Layout {
            num_frames: self.frames.len(),
            num_pixels: self.size().num_pixels(),
            num_edges: self.edges.len(),
        }
    }

    /// Flattens all variables in [`Layout`] order.
    pub fn to_params(&self) -> Vec<f64> {
        let layout = self.layout();
        let mut p = vec![0.0; layout.len()];
        for (t, f) in self.frames.iter().enumerate() {
            let o = layout.frame(t);
            p[o..o + 4].copy_from_slice(&f.quaternion);
            p[o + 4..o + 7].copy_from_slice(f.translation.as_slice());
            p[o + 7] = f.log_focal;
            p[o + FRAME_HEADER..o + FRAME_HEADER + layout.num_pixels]
                .copy_from_slice(f.log_depth.as_slice());
        }
        for (i, e) in self.edges.values().enumerate() {
            let o = layout.edge(i);
            p[o] = e.log_scale;
            p[o + 1..o + 5].copy_from_slice(&e.quaternion);
            p[o + 5..o + 8].copy_from_slice(e.translation.as_slice());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let layout = self.layout();
        assert_eq!(p.len(), layout.len());
        for (t, f) in self.frames.iter_mut().enumerate() {
            let o = layout.frame(t);
            f.quaternion.copy_from_slice(&p[o..o + 4]);
            f.translation = Vector3::from_column_slice(&p[o + 4..o + 7]);
            f.log_focal = p[o + 7];
            f.log_depth
                .as_mut_slice()
                .copy_from_slice(&p[o + FRAME_HEADER..o + FRAME_HEADER + layout.num_pixels]);
        }
        for (i, e) in self.edges.values_mut().enumerate() {
            let o = layout.edge(i);
            e.log_scale = p[o];
            e.quaternion.copy_from_slice(&p[o + 1..o + 5]);
            e.translation = Vector3::from_column_slice(&p[o + 5..o + 8]);
        }
    }
}

fn normalize_quat(q: &mut [f64; 4]) {
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in q.iter_mut() {
        *x /= n;
    }
}

/// Quaternion, translation and log-focal slots that precede the log-depths
/// of each frame.
pub const FRAME_HEADER: usize = 8;
pub const EDGE_BLOCK: usize = 8;

/// Flat parameter layout shared by the state and its gradient.
///
/// Frame `t` occupies `[q(4), T(3), log_focal, log_depth(H·W)]`; edges follow
/// in graph order as `[log_scale, q(4), T(3)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub num_frames: usize,
    pub num_pixels: usize,
    pub num_edges: usize,
}

impl Layout {
    pub fn frame(&self, t: usize) -> usize {
        t * (FRAME_HEADER + self.num_pixels)
    }

    pub fn edge(&self, i: usize) -> usize {
        self.num_frames * (FRAME_HEADER + self.num_pixels) + i * EDGE_BLOCK
    }

    pub fn len(&self) -> usize {
        self.edge(self.num_edges)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gradient of `R(q / |q|)` contracted with `d_rot = ∂L/∂R`, with respect
/// to the raw (unnormalized) quaternion `q`.
pub fn quaternion_gradient(q: &[f64; 4], d_rot: &Matrix3<f64>) -> [f64; 4] {
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let g = d_rot;
    // ∂L/∂q̂ for the polynomial rotation formula.
    let gw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let gh = [gw, gx, gy, gz];
    let qh = [w, x, y, z];
    let dot: f64 = gh.iter().zip(&qh).map(|(a, b)| a * b).sum();
    [
        (gh[0] - dot * qh[0]) / n,
        (gh[1] - dot * qh[1]) / n,
        (gh[2] - dot * qh[2]) / n,
        (gh[3] - dot * qh[3]) / n,
    ]
}
