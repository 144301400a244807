//! Alignment, smoothness and flow losses with hand-derived gradients.
//!
//! Global points are `X = Rᵀ(D n − T)` with `n = ((u − cx)/f, (v − cy)/f, 1)`.
//! Every term first accumulates `∂L/∂X` per frame and pixel plus direct
//! pose contributions; [`Accumulator::finish`] then pushes those through
//! depth, focal, translation and rotation in one pass. Reductions run in a
//! fixed order (edges in graph order, then rows, then columns).

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector2, Vector3};

use super::state::{quaternion_gradient, GlobalState, Layout, FRAME_HEADER};
use crate::geom::{FlowField, Grid};
use crate::graph::Edge;
use crate::pairwise::PairEstimate;

/// Values of the three objective terms at one state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub align: f64,
    pub smooth: f64,
    pub flow: f64,
    /// Pixels contributing to `flow`.
    pub flow_pixels: usize,
}

impl LossTerms {
    /// Mean per-pixel flow loss (pixels), the quantity the flow gate tests.
    pub fn mean_flow(&self) -> f64 {
        if self.flow_pixels == 0 {
            0.0
        } else {
            self.flow / self.flow_pixels as f64
        }
    }
}

/// Term weights for a gradient evaluation; a zero weight skips that term's
/// gradient (its value is still computed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub align: f64,
    pub smooth: f64,
    pub flow: f64,
}

pub(crate) struct FrameCache {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    focal: f64,
    center: Vector2<f64>,
    depth: Vec<f64>,
    rays: Vec<Vector3<f64>>,
    world: Vec<Vector3<f64>>,
}

fn frame_caches(state: &GlobalState) -> Vec<FrameCache> {
    let size = state.size();
    state
        .frames
        .iter()
        .map(|f| {
            let k = f.intrinsics();
            let rotation = f.rotation();
            let rt = rotation.transpose();
            let depth: Vec<f64> = f.log_depth.as_slice().iter().map(|l| l.exp()).collect();
            let rays: Vec<Vector3<f64>> = (0..size.num_pixels())
                .map(|i| {
                    let n = k.normalize(&size.pixel(i));
                    Vector3::new(n.x, n.y, 1.0)
                })
                .collect();
            let world = rays
                .iter()
                .zip(&depth)
                .map(|(n, d)| rt * (n * *d - f.translation))
                .collect();
            FrameCache {
                rotation,
                translation: f.translation,
                focal: k.focal,
                center: Vector2::new(k.cx, k.cy),
                depth,
                rays,
                world,
            }
        })
        .collect()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

struct Accumulator {
    layout: Layout,
    grad: Vec<f64>,
    d_world: Vec<Vec<Vector3<f64>>>,
    d_frame_rot: Vec<Matrix3<f64>>,
    d_edge_rot: Vec<Matrix3<f64>>,
}

impl Accumulator {
    fn new(state: &GlobalState) -> Self {
        let layout = state.layout();
        Self {
            layout,
            grad: vec![0.0; layout.len()],
            d_world: vec![vec![Vector3::zeros(); layout.num_pixels]; layout.num_frames],
            d_frame_rot: vec![Matrix3::zeros(); layout.num_frames],
            d_edge_rot: vec![Matrix3::zeros(); layout.num_edges],
        }
    }

    fn add_frame_translation(&mut self, t: usize, g: &Vector3<f64>) {
        let o = self.layout.frame(t) + 4;
        for k in 0..3 {
            self.grad[o + k] += g[k];
        }
    }

    fn finish(mut self, state: &GlobalState, caches: &[FrameCache]) -> Vec<f64> {
        for (t, c) in caches.iter().enumerate() {
            let o = self.layout.frame(t);
            let mut d_trans = Vector3::zeros();
            let mut d_focal = 0.0;
            let mut d_rot = self.d_frame_rot[t];
            for p in 0..self.layout.num_pixels {
                let g = self.d_world[t][p];
                if g == Vector3::zeros() {
                    continue;
                }
                let rg = c.rotation * g;
                let n = &c.rays[p];
                let d = c.depth[p];
                self.grad[o + FRAME_HEADER + p] += d * rg.dot(n);
                d_focal -= d * (rg.x * n.x + rg.y * n.y);
                d_trans -= rg;
                d_rot += (n * d - c.translation) * g.transpose();
            }
            for k in 0..3 {
                self.grad[o + 4 + k] += d_trans[k];
            }
            self.grad[o + 7] += d_focal;
            let dq = quaternion_gradient(&state.frames[t].quaternion, &d_rot);
            for k in 0..4 {
                self.grad[o + k] += dq[k];
            }
        }
        for (i, e) in state.edges.values().enumerate() {
            let o = self.layout.edge(i);
            let dq = quaternion_gradient(&e.quaternion, &self.d_edge_rot[i]);
            for k in 0..4 {
                self.grad[o + 1 + k] += dq[k];
            }
        }
        self.grad
    }
}

fn align_term(
    state: &GlobalState,
    pairs: &BTreeMap<Edge, PairEstimate>,
    caches: &[FrameCache],
    mut acc: Option<(&mut Accumulator, f64)>,
) -> f64 {
    let mut total = 0.0;
    for (i, (edge, ev)) in state.edges.iter().enumerate() {
        let pair = &pairs[edge];
        let sigma = ev.scale();
        let align = ev.align_pose();
        let views = [
            (edge.from, &pair.pointmap_self, &pair.conf_self),
            (edge.to, &pair.pointmap_other, &pair.conf_other),
        ];
        let mut d_log_scale = 0.0;
        let mut d_trans = Vector3::zeros();
        let mut d_rot = Matrix3::zeros();
        for (frame, pm, conf) in views {
            let world = &caches[frame].world;
            let conf = conf.values.as_slice();
            for (p, y) in pm.valid_points() {
                let c = conf[p];
                let target = sigma * align.apply(y);
                let r = world[p] - target;
                let dist = r.norm();
                total += c * dist;
                if let Some((acc, w)) = acc.as_mut() {
                    if dist == 0.0 {
                        continue;
                    }
                    let g = r * (c * *w / dist);
                    acc.d_world[frame][p] += g;
                    d_log_scale -= g.dot(&target);
                    d_trans -= sigma * g;
                    d_rot -= sigma * g * y.transpose();
                }
            }
        }
        if let Some((acc, _)) = acc.as_mut() {
            let o = acc.layout.edge(i);
            acc.grad[o] += d_log_scale;
            for k in 0..3 {
                acc.grad[o + 5 + k] += d_trans[k];
            }
            acc.d_edge_rot[i] += d_rot;
        }
    }
    total
}

fn smooth_term(caches: &[FrameCache], mut acc: Option<(&mut Accumulator, f64)>) -> f64 {
    let mut total = 0.0;
    for t in 0..caches.len().saturating_sub(1) {
        let (a, b) = (&caches[t], &caches[t + 1]);
        let diff = a.rotation.transpose() * b.rotation - Matrix3::identity();
        let rot_norm = diff.norm();
        let step = b.translation - a.translation;
        let v = a.rotation.transpose() * step;
        let trans_norm = v.norm();
        total += rot_norm + trans_norm;
        if let Some((acc, w)) = acc.as_mut() {
            if rot_norm > 0.0 {
                let g = diff * (*w / rot_norm);
                acc.d_frame_rot[t] += b.rotation * g.transpose();
                acc.d_frame_rot[t + 1] += a.rotation * g;
            }
            if trans_norm > 0.0 {
                let gv = v * (*w / trans_norm);
                let rg = a.rotation * gv;
                acc.add_frame_translation(t + 1, &rg);
                acc.add_frame_translation(t, &-rg);
                acc.d_frame_rot[t] += step * gv.transpose();
            }
        }
    }
    total
}

/// Camera-induced flow residual `F_cam − F_est` of one pixel under the
/// global variables, with the camera-frame point it came from.
fn flow_residual(
    caches: &[FrameCache],
    edge: &Edge,
    p: usize,
    pixel: &Vector2<f64>,
    est: &Vector2<f64>,
) -> Option<(Vector2<f64>, Vector3<f64>)> {
    let b = &caches[edge.to];
    let c = b.rotation * caches[edge.from].world[p] + b.translation;
    if c.z <= 0.0 {
        return None;
    }
    let proj = b.focal * Vector2::new(c.x / c.z, c.y / c.z) + b.center;
    Some((proj - pixel - est, c))
}

fn flow_term(
    state: &GlobalState,
    flows: &BTreeMap<Edge, FlowField>,
    caches: &[FrameCache],
    mut acc: Option<(&mut Accumulator, f64)>,
) -> (f64, usize) {
    let size = state.size();
    let mut total = 0.0;
    let mut count = 0;
    for edge in state.edges.keys() {
        let est = &flows[edge];
        let mask = state.masks.get(edge).map(|m| m.is_static.as_slice());
        let (from, to) = (edge.from, edge.to);
        let mut d_trans = Vector3::zeros();
        let mut d_rot = Matrix3::zeros();
        let mut d_focal = 0.0;
        for p in 0..size.num_pixels() {
            if !est.valid.as_slice()[p] || mask.is_some_and(|m| !m[p]) {
                continue;
            }
            let pixel = size.pixel(p);
            let Some((r, c)) = flow_residual(caches, edge, p, &pixel, &est.flow.as_slice()[p]) else {
                continue;
            };
            total += r.x.abs() + r.y.abs();
            count += 1;
            if let Some((acc, w)) = acc.as_mut() {
                let g = Vector2::new(sign(r.x), sign(r.y)) * *w;
                let f = caches[to].focal;
                let iz = 1.0 / c.z;
                let gc = Vector3::new(f * iz * g.x, f * iz * g.y, -f * iz * iz * (c.x * g.x + c.y * g.y));
                d_focal += f * iz * (c.x * g.x + c.y * g.y);
                d_trans += gc;
                d_rot += gc * caches[from].world[p].transpose();
                acc.d_world[from][p] += caches[to].rotation.transpose() * gc;
            }
        }
        if let Some((acc, _)) = acc.as_mut() {
            acc.add_frame_translation(to, &d_trans);
            let o = acc.layout.frame(to);
            acc.grad[o + 7] += d_focal;
            acc.d_frame_rot[to] += d_rot;
        }
    }
    (total, count)
}

/// Confidence-weighted alignment between the global pointmaps and the
/// scaled, aligned pairwise pointmaps of both frames of every edge:
/// `Σ C ‖X − σ(R_e Y + T_e)‖`, an L1 sum over pixels of per-point Euclidean
/// distances (which keeps the loss invariant to a global rigid motion).
/// Panics if `pairs` lacks an edge of the state.
pub fn loss_align(state: &GlobalState, pairs: &BTreeMap<Edge, PairEstimate>) -> f64 {
    align_term(state, pairs, &frame_caches(state), None)
}

/// `Σ_t ‖R_tᵀR_{t+1} − I‖_F + ‖R_tᵀ(T_{t+1} − T_t)‖₂`.
pub fn loss_smooth(state: &GlobalState) -> f64 {
    smooth_term(&frame_caches(state), None)
}

/// Masked L1 difference between the flow induced by the global variables
/// and the estimated flow. Panics if `flows` lacks an edge of the state.
pub fn loss_flow(state: &GlobalState, flows: &BTreeMap<Edge, FlowField>) -> f64 {
    flow_term(state, flows, &frame_caches(state), None).0
}

/// All three term values plus the gradient of their weighted sum, in
/// [`Layout`] order.
pub fn evaluate(
    state: &GlobalState,
    pairs: &BTreeMap<Edge, PairEstimate>,
    flows: &BTreeMap<Edge, FlowField>,
    weights: TermWeights,
) -> (LossTerms, Vec<f64>) {
    let caches = frame_caches(state);
    let mut acc = Accumulator::new(state);
    fn with(acc: &mut Accumulator, w: f64) -> Option<(&mut Accumulator, f64)> {
        (w != 0.0).then_some((acc, w))
    }
    let align = align_term(state, pairs, &caches, with(&mut acc, weights.align));
    let smooth = smooth_term(&caches, with(&mut acc, weights.smooth));
    let (flow, flow_pixels) = flow_term(state, flows, &caches, with(&mut acc, weights.flow));
    let grad = acc.finish(state, &caches);
    (
        LossTerms {
            align,
            smooth,
            flow,
            flow_pixels,
        },
        grad,
    )
}

/// Per-pixel L1 flow residual of one edge (`None` where the estimated flow
/// is invalid or the point falls behind the second camera). Masks are not
/// applied.
pub fn flow_residuals(state: &GlobalState, flows: &BTreeMap<Edge, FlowField>, edge: &Edge) -> Grid<Option<f64>> {
    let caches = frame_caches(state);
    residual_grid(&caches, state, &flows[edge], edge)
}

fn residual_grid(caches: &[FrameCache], state: &GlobalState, est: &FlowField, edge: &Edge) -> Grid<Option<f64>> {
    let size = state.size();
    Grid::from_fn(size, |u, v| {
        let p = size.index(u, v);
        if !est.valid.as_slice()[p] {
            return None;
        }
        flow_residual(caches, edge, p, &size.pixel(p), &est.flow.as_slice()[p]).map(|(r, _)| r.x.abs() + r.y.abs())
    })
}

/// Per-pixel flow residuals of every edge, sharing one cache build.
pub(crate) fn all_flow_residuals(
    state: &GlobalState,
    flows: &BTreeMap<Edge, FlowField>,
) -> BTreeMap<Edge, Grid<Option<f64>>> {
    let caches = frame_caches(state);
    state
        .edges
        .keys()
        .map(|e| (*e, residual_grid(&caches, state, &flows[e], e)))
        .collect()
}
