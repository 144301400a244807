use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geom::{fit_similarity, ConfidenceMap, Grid, ImageSize, Pointmap, PoseSE3, StaticMask};
use crate::graph::build_window_graph;
use crate::oracle::{render_sequence, NoiseSpec, ObjectMotion, DynamicObject, OracleSequence, SceneSpec};
use crate::pairwise::{default_alpha, RelativePoseResult};

fn ate(pred: &[PoseSE3], gt: &[PoseSE3]) -> f64 {
    let p: Vec<_> = pred.iter().map(PoseSE3::center).collect();
    let g: Vec<_> = gt.iter().map(PoseSE3::center).collect();
    let fit = fit_similarity(&p, &g, None, true).unwrap();
    let sum: f64 = p.iter().zip(&g).map(|(a, b)| (fit.transform.apply(a) - b).norm_squared()).sum();
    (sum / p.len() as f64).sqrt()
}

fn small_oracle(frames: usize) -> OracleSequence {
    let size = ImageSize::new(24, 32).unwrap();
    let spec = SceneSpec::dolly_orbit(frames, size, 26.0);
    render_sequence(&spec, &build_window_graph(frames, 3, 1).unwrap()).unwrap()
}

fn two_frame_state(second: PoseSE3) -> GlobalState {
    let size = ImageSize::new(2, 2).unwrap();
    let depth = Grid::filled(size, 1.0);
    GlobalState {
        frames: vec![
            FrameVariables::new(&PoseSE3::identity(), &depth, 1.0),
            FrameVariables::new(&second, &depth, 1.0),
        ],
        edges: BTreeMap::new(),
        graph: build_window_graph(2, 1, 1).unwrap(),
        masks: BTreeMap::new(),
    }
}

#[test]
fn smoothness_hand_values() {
    assert_eq!(loss_smooth(&two_frame_state(PoseSE3::identity())), 0.0);
    let step = two_frame_state(PoseSE3::from_translation(Vector3::new(1.0, 0.0, 0.0)));
    assert!((loss_smooth(&step) - 1.0).abs() < 1e-15);
    let quarter = two_frame_state(PoseSE3::from_axis_angle(
        &Vector3::z(),
        std::f64::consts::FRAC_PI_2,
        Vector3::zeros(),
    ));
    assert!((loss_smooth(&quarter) - 2.0).abs() < 1e-12);
}

#[test]
fn ground_truth_state_has_zero_loss() {
    let seq = small_oracle(6);
    let state = seq.ground_truth_state();
    assert!(loss_align(&state, &seq.pairs()) < 1e-6);
    assert!(loss_flow(&state, &seq.flows()) < 1e-6);
    let mut gate = FlowGate::default();
    let total = total_objective(&state, &seq.pairs(), &seq.flows(), &OptimSchedule::default(), &mut gate);
    assert!(total < 0.01 * loss_smooth(&state) + 1e-6);
    assert!(gate.enabled);

    let size = ImageSize::new(24, 32).unwrap();
    let fixed = SceneSpec::static_camera(4, size, 26.0);
    let seq = render_sequence(&fixed, &build_window_graph(4, 2, 1).unwrap()).unwrap();
    let state = seq.ground_truth_state();
    assert!(loss_smooth(&state) < 1e-6);
    assert!(loss_align(&state, &seq.pairs()) < 1e-6);
    assert!(loss_flow(&state, &seq.flows()) < 1e-6);
}

#[test]
fn moving_objects_do_not_break_ground_truth_zero() {
    let size = ImageSize::new(24, 32).unwrap();
    let spec = SceneSpec::dolly(5, size, 26.0).with_circling_sphere(2.0, 0.4, 0.3, 8.0);
    let seq = render_sequence(&spec, &build_window_graph(5, 2, 1).unwrap()).unwrap();
    let state = seq.ground_truth_state();
    assert!(loss_align(&state, &seq.pairs()) < 1e-6);
    assert!(loss_flow(&state, &seq.flows()) < 1e-6);
    // Without the masks the moving sphere shows up in the flow term.
    let mut unmasked = state.clone();
    unmasked.masks.clear();
    assert!(loss_flow(&unmasked, &seq.flows()) > 1.0);
}

#[test]
fn zero_mask_zeroes_flow_loss() {
    let seq = small_oracle(4);
    let mut state = seq.ground_truth_state();
    let mut flows = seq.flows();
    for f in flows.values_mut() {
        for v in f.flow.as_mut_slice() {
            *v += Vector2::new(3.0, -1.0);
        }
    }
    assert!(loss_flow(&state, &flows) > 1.0);
    for m in state.masks.values_mut() {
        *m = StaticMask::all(m.size(), false);
    }
    assert_eq!(loss_flow(&state, &flows), 0.0);
}

#[test]
fn single_depth_perturbation_matches_confidence_times_offset() {
    let seq = small_oracle(4);
    let mut pairs = seq.pairs();
    for p in pairs.values_mut() {
        let mut rng = ChaCha8Rng::seed_from_u64(p.frame_ids.0 as u64 * 31 + p.frame_ids.1 as u64);
        p.conf_self = ConfidenceMap::new(p.conf_self.values.map(|_| rng.random_range(0.2..2.0))).unwrap();
        p.conf_other = ConfidenceMap::new(p.conf_other.values.map(|_| rng.random_range(0.2..2.0))).unwrap();
    }
    let state = seq.ground_truth_state();
    let base = loss_align(&state, &pairs);
    let (t, u, v) = (2, 7, 5);
    let delta = 1e-3;
    let mut moved = state.clone();
    let d = moved.frames[t].log_depth.get(u, v).exp();
    *moved.frames[t].log_depth.get_mut(u, v) = (d + delta).ln();
    let change = loss_align(&moved, &pairs) - base;

    let k = seq.frames[t].intrinsics;
    let n = k.normalize(&Vector2::new(u as f64, v as f64));
    let ray = Vector3::new(n.x, n.y, 1.0).norm();
    let p = state.size().index(u, v);
    let mut expected = 0.0;
    for (e, pair) in &pairs {
        if e.from == t {
            expected += pair.conf_self.values.as_slice()[p] * ray * delta;
        }
        if e.to == t {
            expected += pair.conf_other.values.as_slice()[p] * ray * delta;
        }
    }
    assert!((change - expected).abs() < 1e-9 * expected.max(1.0), "{change} vs {expected}");
}

/// Small random state with random pairwise inputs, away from the ground truth.
fn random_problem(seed: u64) -> (GlobalState, BTreeMap<Edge, PairEstimate>, BTreeMap<Edge, FlowField>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = ImageSize::new(5, 6).unwrap();
    let graph = build_window_graph(4, 2, 1).unwrap();
    let quat = |rng: &mut ChaCha8Rng| {
        let s = rng.random_range(0.8..1.2);
        [
            s,
            s * rng.random_range(-0.15..0.15),
            s * rng.random_range(-0.15..0.15),
            s * rng.random_range(-0.15..0.15),
        ]
    };
    let vec3 = |rng: &mut ChaCha8Rng, r: f64| {
        Vector3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
    };
    let frames = (0..4)
        .map(|_| FrameVariables {
            quaternion: quat(&mut rng),
            translation: vec3(&mut rng, 0.3),
            log_depth: Grid::from_fn(size, |_, _| rng.random_range(2.0f64..4.0).ln()),
            log_focal: rng.random_range(5.0f64..8.0).ln(),
        })
        .collect();
    let mut edges = BTreeMap::new();
    let mut pairs = BTreeMap::new();
    let mut flows = BTreeMap::new();
    let mut masks = BTreeMap::new();
    for e in &graph.edges {
        edges.insert(
            *e,
            EdgeVariables {
                log_scale: rng.random_range(-0.2..0.2),
                quaternion: quat(&mut rng),
                translation: vec3(&mut rng, 0.3),
            },
        );
        let pm = |rng: &mut ChaCha8Rng| {
            let points = Grid::from_fn(size, |_, _| {
                Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0), rng.random_range(2.0..4.0))
            });
            let valid = Grid::from_fn(size, |_, _| rng.random_bool(0.9));
            Pointmap::new(points, valid).unwrap()
        };
        let (a, b) = (pm(&mut rng), pm(&mut rng));
        let conf = |rng: &mut ChaCha8Rng| ConfidenceMap::new(Grid::from_fn(size, |_, _| rng.random_range(0.5..1.5))).unwrap();
        let (ca, cb) = (conf(&mut rng), conf(&mut rng));
        pairs.insert(*e, PairEstimate::new((e.from, e.to), a, b, ca, cb).unwrap());
        let flow = Grid::from_fn(size, |_, _| Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)));
        let valid = Grid::from_fn(size, |_, _| rng.random_bool(0.9));
        flows.insert(*e, FlowField::new(flow, valid).unwrap());
        masks.insert(*e, StaticMask { is_static: Grid::from_fn(size, |_, _| rng.random_bool(0.8)) });
    }
    let state = GlobalState {
        frames,
        edges,
        graph,
        masks,
    };
    (state, pairs, flows)
}

#[test]
fn gradients_match_central_differences() {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let (state, pairs, flows) = random_problem(seed);
        let layout = state.layout();
        let mut indices: Vec<usize> = Vec::new();
        for t in 0..layout.num_frames {
            let o = layout.frame(t);
            indices.extend(o..o + FRAME_HEADER);
            indices.extend([o + FRAME_HEADER, o + FRAME_HEADER + 13, o + FRAME_HEADER + layout.num_pixels - 1]);
        }
        for i in 0..layout.num_edges {
            let o = layout.edge(i);
            indices.extend(o..o + EDGE_BLOCK);
        }
        let terms: [(TermWeights, fn(&LossTerms) -> f64); 3] = [
            (TermWeights { align: 1.0, smooth: 0.0, flow: 0.0 }, |t| t.align),
            (TermWeights { align: 0.0, smooth: 1.0, flow: 0.0 }, |t| t.smooth),
            (TermWeights { align: 0.0, smooth: 0.0, flow: 1.0 }, |t| t.flow),
        ];
        for (weights, pick) in terms {
            let (_, grad) = evaluate(&state, &pairs, &flows, weights);
            let params = state.to_params();
            let value_at = |p: &[f64]| {
                let mut s = state.clone();
                s.set_params(p);
                pick(&evaluate(&s, &pairs, &flows, TermWeights { align: 0.0, smooth: 0.0, flow: 0.0 }).0)
            };
            for &i in &indices {
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus[i] += h;
                minus[i] -= h;
                let fd = (value_at(&plus) - value_at(&minus)) / (2.0 * h);
                let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
                worst = worst.max(err);
                assert!(err < 1e-4, "seed {seed} index {i}: analytic {} vs fd {fd}", grad[i]);
            }
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn alignment_loss_is_gauge_invariant() {
    for seed in 0..5 {
        let (state, pairs, _) = random_problem(seed);
        let g = PoseSE3::from_axis_angle(&Vector3::new(0.3, -1.0, 0.5), 0.7, Vector3::new(0.4, -0.2, 1.1));
        let mut moved = state.clone();
        for f in &mut moved.frames {
            let p = f.pose().compose(&g.inverse());
            f.quaternion = crate::geom::rotation_to_quat(&p.rotation);
            f.translation = p.translation;
        }
        for e in moved.edges.values_mut() {
            let sigma = e.scale();
            let a = e.align_pose();
            let p = PoseSE3 {
                rotation: g.rotation * a.rotation,
                translation: g.rotation * a.translation + g.translation / sigma,
            };
            e.quaternion = crate::geom::rotation_to_quat(&p.rotation);
            e.translation = p.translation;
        }
        let before = loss_align(&state, &pairs);
        let after = loss_align(&moved, &pairs);
        assert!((before - after).abs() < 1e-9 * before.max(1.0), "{before} vs {after}");
    }
}

#[test]
fn flow_gate_threshold_and_latch() {
    let seq = small_oracle(4);
    let state = seq.ground_truth_state();
    let pairs = seq.pairs();
    let shifted = |dx: f64| {
        let mut flows = seq.flows();
        for f in flows.values_mut() {
            for v in f.flow.as_mut_slice() {
                v.x += dx;
            }
        }
        flows
    };
    let schedule = OptimSchedule::default();
    let align = loss_align(&state, &pairs);
    let smooth = loss_smooth(&state);

    let mut gate = FlowGate::default();
    let total = total_objective(&state, &pairs, &shifted(25.0), &schedule, &mut gate);
    assert!(!gate.enabled);
    assert!((total - (align + 0.01 * smooth)).abs() < 1e-9);

    let far = shifted(15.0);
    let total = total_objective(&state, &pairs, &far, &schedule, &mut gate);
    assert!(gate.enabled);
    assert!((total - (align + 0.01 * smooth + 0.01 * loss_flow(&state, &far))).abs() < 1e-9);
    // Latched: a large residual later does not switch the term off.
    total_objective(&state, &pairs, &shifted(40.0), &schedule, &mut gate);
    assert!(gate.enabled);

    let no_weights = OptimSchedule { w_smooth: 0.0, w_flow: 0.0, ..schedule };
    let mut gate = FlowGate::default();
    assert_eq!(total_objective(&state, &pairs, &far, &no_weights, &mut gate), align);
}

#[test]
fn mask_update_flips_only_large_residuals() {
    let seq = small_oracle(4);
    let state = seq.ground_truth_state();
    let schedule = OptimSchedule::default();
    let unchanged = update_masks(&state, &seq.flows(), &schedule);
    assert_eq!(unchanged.masks, state.masks);

    let mut flows = seq.flows();
    let edge = seq.graph.edges[0];
    let f = flows.get_mut(&edge).unwrap();
    *f.flow.get_mut(4, 3) += Vector2::new(60.0, 0.0);
    *f.flow.get_mut(5, 3) += Vector2::new(30.0, 10.0);
    let updated = update_masks(&state, &flows, &schedule);
    let before = &state.masks[&edge];
    let after = &updated.masks[&edge];
    assert!(!*after.is_static.get(4, 3));
    assert!(*after.is_static.get(5, 3));
    assert_eq!(before.num_static() - 1, after.num_static());
}

#[test]
fn fast_mover_is_flagged_during_optimization() {
    let size = ImageSize::new(24, 32).unwrap();
    let mut spec = SceneSpec::static_camera(6, size, 26.0);
    // Crosses the view at about 20 px per frame.
    spec.dynamic_objects.push(DynamicObject {
        radius: 0.25,
        motion: ObjectMotion::Linear {
            start: Vector3::new(-0.5, 0.0, 2.0),
            velocity: Vector3::new(1.5, 0.0, 0.0),
        },
    });
    let seq = render_sequence(&spec, &build_window_graph(6, 5, 1).unwrap()).unwrap();
    let mut state = seq.ground_truth_state();
    for m in state.masks.values_mut() {
        *m = StaticMask::all(m.size(), true);
    }
    let schedule = OptimSchedule {
        iterations: 30,
        learning_rate: 1e-4,
        ..Default::default()
    };
    let (out, trace) = optimize(state.clone(), &seq.pairs(), &seq.flows(), &schedule).unwrap();
    assert!(trace[0].flow_enabled);
    let residuals = loss::all_flow_residuals(&state, &seq.flows());
    let (mut large, mut flipped) = (0, 0);
    for (edge, res) in &residuals {
        for (p, r) in res.as_slice().iter().enumerate() {
            if r.is_some_and(|r| r > 60.0) {
                large += 1;
                flipped += !out.masks[edge].is_static.as_slice()[p] as usize;
            }
        }
    }
    assert!(large > 20, "{large}");
    assert_eq!(flipped, large);
}

#[test]
fn init_from_exact_inputs_recovers_trajectory() {
    let seq = small_oracle(8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pw = estimate_pairwise(&seq.graph, &seq.pairs(), &RansacParams::default(), &mut rng).unwrap();
    assert!(pw.failed_edges().is_empty());
    for (t, f) in &pw.focals {
        assert!((f - 26.0).abs() < 1e-3, "frame {t}: {f}");
    }
    let alpha = default_alpha(ImageSize::new(24, 32).unwrap());
    let state = init_global_state(&seq.graph, &seq.pairs(), &pw.poses, &pw.focals, &seq.flows(), alpha).unwrap();
    assert!(ate(&state.poses(), &seq.poses()) < 1e-3);
    assert!(loss_align(&state, &seq.pairs()) < 1e-3);
}

#[test]
fn init_rejects_broken_graphs() {
    let seq = small_oracle(4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pw = estimate_pairwise(&seq.graph, &seq.pairs(), &RansacParams::default(), &mut rng).unwrap();
    let mut graph = seq.graph.clone();
    graph.edges.retain(|e| *e != Edge::new(1, 2));
    let err = init_global_state(&graph, &seq.pairs(), &pw.poses, &pw.focals, &seq.flows(), 1.0).unwrap_err();
    assert_eq!(err, OptimError::MissingAdjacentEdges(vec![1]));
    let single = crate::graph::VideoGraph {
        num_frames: 1,
        window: 1,
        stride: 1,
        edges: vec![],
    };
    assert!(matches!(
        init_global_state(&single, &seq.pairs(), &pw.poses, &pw.focals, &seq.flows(), 1.0),
        Err(OptimError::TooFewFrames(1))
    ));
}

#[test]
fn failed_edge_is_bridged_and_still_converges() {
    let seq = small_oracle(8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut pw = estimate_pairwise(&seq.graph, &seq.pairs(), &RansacParams::default(), &mut rng).unwrap();
    let broken = Edge::new(3, 4);
    pw.poses.insert(broken, RelativePoseResult::fallback_identity(ImageSize::new(24, 32).unwrap()));
    assert_eq!(pw.failed_edges(), vec![broken]);
    let alpha = default_alpha(ImageSize::new(24, 32).unwrap());
    let state = init_global_state(&seq.graph, &seq.pairs(), &pw.poses, &pw.focals, &seq.flows(), alpha).unwrap();
    assert!(ate(&state.poses(), &seq.poses()) < 1e-3);
    let (out, _) = optimize(state, &seq.pairs(), &seq.flows(), &OptimSchedule::default()).unwrap();
    assert!(ate(&out.poses(), &seq.poses()) < 1e-3);

    // Without a bridge the frame copies its predecessor, and the optimizer
    // has to repair it.
    let mut graph = seq.graph.clone();
    graph.edges.retain(|e| e.to != 4 || e.from == 3);
    let pairs: BTreeMap<_, _> = seq.pairs().into_iter().filter(|(e, _)| graph.contains(e)).collect();
    let flows: BTreeMap<_, _> = seq.flows().into_iter().filter(|(e, _)| graph.contains(e)).collect();
    let state = init_global_state(&graph, &pairs, &pw.poses, &pw.focals, &flows, alpha).unwrap();
    let start = ate(&state.poses(), &seq.poses());
    let (out, _) = optimize(state, &pairs, &flows, &OptimSchedule::default()).unwrap();
    let end = ate(&out.poses(), &seq.poses());
    assert!(end < 0.25 * start, "{start} -> {end}");
}

#[test]
fn zero_iterations_return_initialization() {
    let seq = small_oracle(4);
    let schedule = OptimSchedule {
        iterations: 0,
        ..Default::default()
    };
    let alpha = default_alpha(ImageSize::new(24, 32).unwrap());
    let result = run_global_optimization(&seq.graph, &seq.pairs(), &seq.flows(), &schedule, &RansacParams::default(), alpha, 3).unwrap();
    assert_eq!(result.trace.len(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pw = estimate_pairwise(&seq.graph, &seq.pairs(), &RansacParams::default(), &mut rng).unwrap();
    let init = init_global_state(&seq.graph, &seq.pairs(), &pw.poses, &pw.focals, &seq.flows(), alpha).unwrap();
    assert_eq!(result.state, init);
}

#[test]
fn noisy_run_descends_and_is_deterministic() {
    let size = ImageSize::new(24, 32).unwrap();
    let spec = SceneSpec::dolly_orbit(8, size, 26.0).with_noise(NoiseSpec {
        depth_sigma: 0.02,
        confidence_floor: 0.1,
    });
    let seq = render_sequence(&spec, &build_window_graph(8, 3, 1).unwrap()).unwrap();
    let schedule = OptimSchedule::default();
    let alpha = default_alpha(size);
    let run = || run_global_optimization(&seq.graph, &seq.pairs(), &seq.flows(), &schedule, &RansacParams::default(), alpha, 11).unwrap();
    let a = run();
    let b = run();
    let bits = |r: &GlobalResult| r.trace.iter().map(|x| x.total.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.state, b.state);

    let means: Vec<f64> = a
        .trace
        .windows(50)
        .step_by(50)
        .map(|w| w.iter().map(|r| r.total).sum::<f64>() / 50.0)
        .collect();
    assert!(means.len() >= 5);
    for w in means.windows(2) {
        assert!(w[1] < w[0], "{means:?}");
    }
}

#[test]
fn gauge_is_kept_during_optimization() {
    let (state, pairs, flows) = random_problem(4);
    let schedule = OptimSchedule {
        iterations: 5,
        ..Default::default()
    };
    let (out, _) = optimize(state, &pairs, &flows, &schedule).unwrap();
    assert_eq!(out.frames[0].pose().rotation, Matrix3::identity());
    assert_eq!(out.frames[0].translation, Vector3::zeros());
    let mean: f64 = out.edges.values().map(|e| e.log_scale).sum::<f64>() / out.edges.len() as f64;
    assert!(mean.abs() < 1e-12);
    for f in &out.frames {
        let n: f64 = f.quaternion.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }
}

#[test]
fn non_finite_inputs_abort_with_diagnostics() {
    let (state, mut pairs, flows) = random_problem(5);
    let e = *pairs.keys().next().unwrap();
    let p = pairs.get_mut(&e).unwrap();
    p.conf_self = ConfidenceMap { values: p.conf_self.values.map(|_| f64::INFINITY) };
    let err = optimize(state, &pairs, &flows, &OptimSchedule::default()).unwrap_err();
    assert!(matches!(err, OptimError::NonFinite { iteration: 0, .. }), "{err}");
}
