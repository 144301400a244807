//! Global optimization of camera poses, intrinsics, per-frame depth and
//! per-edge alignments:
//!
//! `L = L_align + w_smooth L_smooth + w_flow L_flow`
//!
//! minimized with Adam. Frame 0 is pinned to the identity and the edge log
//! scales are kept at zero mean, which removes the rigid and scale gauge
//! freedoms. The flow term stays off until the mean per-pixel flow loss
//! first drops below `flow_enable_threshold`, then stays on; static masks
//! are revisited every `mask_update_interval` iterations afterwards.

mod init;
mod loss;
mod state;
#[cfg(test)]
mod tests;

pub use init::{estimate_pairwise, init_global_state, PairwiseOutputs};
pub use loss::{evaluate, flow_residuals, loss_align, loss_flow, loss_smooth, LossTerms, TermWeights};
pub use state::{
    quaternion_gradient, EdgeVariables, FrameVariables, GlobalState, Layout, EDGE_BLOCK, FRAME_HEADER,
};

use std::collections::BTreeMap;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::{DepthMap, FlowField, GeomError, Intrinsics, PoseSE3, StaticMask};
use crate::graph::{Edge, VideoGraph};
use crate::pairwise::{PairEstimate, PairwiseError, RansacParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("need at least two frames, got {0}")]
    TooFewFrames(usize),
    #[error("graph lacks adjacent edges starting at frames {0:?}")]
    MissingAdjacentEdges(Vec<usize>),
    #[error("no pairwise estimate for edge {0}")]
    MissingPair(Edge),
    #[error("no flow for edge {0}")]
    MissingFlow(Edge),
    #[error("no relative pose for edge {0}")]
    MissingPose(Edge),
    #[error("no focal for frame {0}")]
    MissingFocal(usize),
    #[error("focal estimation failed on every edge")]
    NoFocal,
    #[error("inputs of edge {0} disagree in size")]
    SizeMismatch(Edge),
    #[error("non-finite {term} at iteration {iteration}")]
    NonFinite { iteration: usize, term: &'static str },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(&'static str),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Pairwise(#[from] PairwiseError),
}

/// Learning-rate decay over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from the base rate down to [`MIN_LEARNING_RATE`].
    #[default]
    Cosine,
}

pub const MIN_LEARNING_RATE: f64 = 1e-6;

/// Per-class multipliers on the Adam step. Adam moves every parameter by
/// roughly the learning rate regardless of its units; these keep pose and
/// focal steps small relative to log-depth steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepScales {
    pub rotation: f64,
    pub translation: f64,
    pub focal: f64,
    pub depth: f64,
    pub edge_scale: f64,
}

impl Default for StepScales {
    fn default() -> Self {
        Self {
            rotation: 0.1,
            translation: 0.1,
            focal: 0.05,
            depth: 1.0,
            edge_scale: 0.1,
        }
    }
}

impl StepScales {
    pub fn uniform() -> Self {
        Self {
            rotation: 1.0,
            translation: 1.0,
            focal: 1.0,
            depth: 1.0,
            edge_scale: 1.0,
        }
    }

    fn is_valid(&self) -> bool {
        [self.rotation, self.translation, self.focal, self.depth, self.edge_scale]
            .iter()
            .all(|x| *x > 0.0 && x.is_finite())
    }

    fn per_parameter(&self, layout: &Layout) -> Vec<f64> {
        let frames_end = layout.edge(0);
        (0..layout.len())
            .map(|i| {
                if i < frames_end {
                    match i % (FRAME_HEADER + layout.num_pixels) {
                        0..=3 => self.rotation,
                        4..=6 => self.translation,
                        7 => self.focal,
                        _ => self.depth,
                    }
                } else {
                    match (i - frames_end) % EDGE_BLOCK {
                        0 => self.edge_scale,
                        1..=4 => self.rotation,
                        _ => self.translation,
                    }
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimSchedule {
    pub iterations: usize,
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub w_smooth: f64,
    pub w_flow: f64,
    /// Mean per-pixel flow loss (pixels) below which the flow term turns on.
    pub flow_enable_threshold: f64,
    /// Per-pixel flow residual (pixels) above which a pixel becomes dynamic.
    pub mask_update_threshold: f64,
    pub mask_update_interval: usize,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub step_scales: StepScales,
    /// Optimize one focal shared by all frames.
    pub shared_focal: bool,
}

impl Default for OptimSchedule {
    fn default() -> Self {
        Self {
            iterations: 300,
            learning_rate: 0.01,
            lr_schedule: LrSchedule::Cosine,
            w_smooth: 0.01,
            w_flow: 0.01,
            flow_enable_threshold: 20.0,
            mask_update_threshold: 50.0,
            mask_update_interval: 10,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            step_scales: StepScales::default(),
            shared_focal: false,
        }
    }
}

impl OptimSchedule {
    pub fn validate(&self) -> Result<(), OptimError> {
        let positive = [
            self.learning_rate,
            self.flow_enable_threshold,
            self.mask_update_threshold,
            self.adam_eps,
        ];
        if positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(OptimError::InvalidSchedule("rates and thresholds must be positive"));
        }
        if !(self.w_smooth >= 0.0 && self.w_flow >= 0.0) {
            return Err(OptimError::InvalidSchedule("term weights must be non-negative"));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(OptimError::InvalidSchedule("Adam betas must lie in [0, 1)"));
        }
        if self.mask_update_interval == 0 {
            return Err(OptimError::InvalidSchedule("mask update interval must be positive"));
        }
        if !self.step_scales.is_valid() {
            return Err(OptimError::InvalidSchedule("step scales must be positive"));
        }
        Ok(())
    }

    /// Learning rate used for the step taken at `iteration`.
    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let x = iteration as f64 / self.iterations.max(1) as f64;
                let lo = MIN_LEARNING_RATE.min(self.learning_rate);
                lo + (self.learning_rate - lo) * 0.5 * (1.0 + (std::f64::consts::PI * x).cos())
            }
        }
    }
}

/// Latching switch for the flow term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlowGate {
    pub enabled: bool,
}

impl FlowGate {
    /// Turns the gate on for good once `mean_flow < threshold`.
    pub fn check(&mut self, mean_flow: f64, threshold: f64) -> bool {
        if !self.enabled && mean_flow < threshold {
            self.enabled = true;
        }
        self.enabled
    }
}

/// Full objective at `state`, updating `gate` first.
pub fn total_objective(
    state: &GlobalState,
    pairs: &BTreeMap<Edge, PairEstimate>,
    flows: &BTreeMap<Edge, FlowField>,
    schedule: &OptimSchedule,
    gate: &mut FlowGate,
) -> f64 {
    let (terms, _) = evaluate(state, pairs, flows, NO_GRADIENT);
    combine(&terms, schedule, gate)
}

const NO_GRADIENT: TermWeights = TermWeights {
    align: 0.0,
    smooth: 0.0,
    flow: 0.0,
};

fn combine(terms: &LossTerms, schedule: &OptimSchedule, gate: &mut FlowGate) -> f64 {
    let flow_on = gate.check(terms.mean_flow(), schedule.flow_enable_threshold);
    terms.align + schedule.w_smooth * terms.smooth + if flow_on { schedule.w_flow * terms.flow } else { 0.0 }
}

fn apply_mask_update(state: &mut GlobalState, flows: &BTreeMap<Edge, FlowField>, threshold: f64) -> usize {
    let residuals = loss::all_flow_residuals(state, flows);
    let mut flipped = 0;
    for (edge, res) in residuals {
        let mask = state.masks.entry(edge).or_insert_with(|| StaticMask::all(res.size(), true));
        for (s, r) in mask.is_static.as_mut_slice().iter_mut().zip(res.as_slice()) {
            if *s && r.is_some_and(|r| r > threshold) {
                *s = false;
                flipped += 1;
            }
        }
    }
    flipped
}

/// Marks as dynamic every static pixel whose flow residual exceeds
/// `schedule.mask_update_threshold`. Pixels never flip back to static.
pub fn update_masks(
    state: &GlobalState,
    flows: &BTreeMap<Edge, FlowField>,
    schedule: &OptimSchedule,
) -> GlobalState {
    let mut next = state.clone();
    apply_mask_update(&mut next, flows, schedule.mask_update_threshold);
    next
}

/// Objective terms and flow-gate state at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub align: f64,
    pub smooth: f64,
    pub flow: f64,
    pub flow_enabled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalResult {
    /// World-to-camera poses.
    pub poses: Vec<PoseSE3>,
    /// Video depth.
    pub depths: Vec<DepthMap>,
    pub intrinsics: Vec<Intrinsics>,
    pub masks: BTreeMap<Edge, StaticMask>,
    /// One record per iteration plus one for the final state.
    pub trace: Vec<LossRecord>,
    pub state: GlobalState,
    /// Edges whose relative pose fell back to the identity.
    pub failed_edges: Vec<Edge>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], scale: &[f64], lr: f64, betas: (f64, f64), eps: f64) {
        self.step += 1;
        let (b1, b2) = betas;
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            params[i] -= scale[i] * lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

/// Runs Adam from an initialized state.
pub fn optimize(
    mut state: GlobalState,
    pairs: &BTreeMap<Edge, PairEstimate>,
    flows: &BTreeMap<Edge, FlowField>,
    schedule: &OptimSchedule,
) -> Result<(GlobalState, Vec<LossRecord>), OptimError> {
    schedule.validate()?;
    if schedule.shared_focal {
        let mean = state.frames.iter().map(|f| f.log_focal).sum::<f64>() / state.frames.len() as f64;
        for f in &mut state.frames {
            f.log_focal = mean;
        }
    }
    let layout = state.layout();
    let mut adam = Adam::new(layout.len());
    let mut gate = FlowGate::default();
    let mut trace = Vec::with_capacity(schedule.iterations + 1);
    let mut params = state.to_params();
    let lr_scale = schedule.step_scales.per_parameter(&layout);

    for iteration in 0..=schedule.iterations {
        if gate.enabled && iteration > 0 && iteration % schedule.mask_update_interval == 0 {
            let flipped = apply_mask_update(&mut state, flows, schedule.mask_update_threshold);
            if flipped > 0 {
                debug!("iter {iteration}: {flipped} pixels marked dynamic");
            }
        }
        let weights = |flow_on: bool| TermWeights {
            align: 1.0,
            smooth: schedule.w_smooth,
            flow: if flow_on { schedule.w_flow } else { 0.0 },
        };
        let was_enabled = gate.enabled;
        let (terms, mut grad) = evaluate(&state, pairs, flows, weights(was_enabled));
        let total = combine(&terms, schedule, &mut gate);
        for (value, term) in [
            (terms.align, "alignment loss"),
            (terms.smooth, "smoothness loss"),
            (terms.flow, "flow loss"),
        ] {
            if !value.is_finite() {
                return Err(OptimError::NonFinite { iteration, term });
            }
        }
        trace.push(LossRecord {
            iteration,
            total,
            align: terms.align,
            smooth: terms.smooth,
            flow: terms.flow,
            flow_enabled: gate.enabled,
        });
        debug!(
            "iter {iteration}: total {total:.6} align {:.6} smooth {:.6} flow {:.6} (gate {})",
            terms.align, terms.smooth, terms.flow, gate.enabled
        );
        if iteration == schedule.iterations {
            break;
        }
        if gate.enabled && !was_enabled {
            grad = evaluate(&state, pairs, flows, weights(true)).1;
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(OptimError::NonFinite {
                iteration,
                term: variable_class(&layout, i),
            });
        }
        // Frame 0 is pinned.
        grad[..FRAME_HEADER - 1].iter_mut().for_each(|g| *g = 0.0);
        if schedule.shared_focal {
            let sum: f64 = (0..layout.num_frames).map(|t| grad[layout.frame(t) + 7]).sum();
            for t in 0..layout.num_frames {
                grad[layout.frame(t) + 7] = sum;
            }
        }
        adam.update(
            &mut params,
            &grad,
            &lr_scale,
            schedule.learning_rate_at(iteration),
            schedule.adam_betas,
            schedule.adam_eps,
        );
        state.set_params(&params);
        state.project_gauge();
        params = state.to_params();
    }
    info!(
        "optimization finished: objective {:.6} -> {:.6}",
        trace.first().map_or(0.0, |r| r.total),
        trace.last().map_or(0.0, |r| r.total)
    );
    Ok((state, trace))
}

fn variable_class(layout: &Layout, index: usize) -> &'static str {
    let frames_end = layout.edge(0);
    if index < frames_end {
        match index % (FRAME_HEADER + layout.num_pixels) {
            0..=3 => "gradient of a frame rotation",
            4..=6 => "gradient of a frame translation",
            7 => "gradient of a focal",
            _ => "gradient of a depth",
        }
    } else {
        match (index - frames_end) % EDGE_BLOCK {
            0 => "gradient of an edge scale",
            1..=4 => "gradient of an edge rotation",
            _ => "gradient of an edge translation",
        }
    }
}

/// Pairwise stage, initialization and Adam in one call. All randomness
/// (RANSAC sampling) derives from `seed`.
pub fn run_global_optimization(
    graph: &VideoGraph,
    pairs: &BTreeMap<Edge, PairEstimate>,
    flows: &BTreeMap<Edge, FlowField>,
    schedule: &OptimSchedule,
    ransac: &RansacParams,
    alpha: f64,
    seed: u64,
) -> Result<GlobalResult, OptimError> {
    schedule.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairwise = estimate_pairwise(graph, pairs, ransac, &mut rng)?;
    let state = init_global_state(graph, pairs, &pairwise.poses, &pairwise.focals, flows, alpha)?;
    let (state, trace) = optimize(state, pairs, flows, schedule)?;
    Ok(GlobalResult {
        poses: state.poses(),
        depths: state.depths(),
        intrinsics: state.intrinsics(),
        masks: state.masks.clone(),
        trace,
        failed_edges: pairwise.failed_edges(),
        state,
    })
}
