//! Acceptance suite: one test per promised behavior, each printing a
//! single `[PASS]`/`[FAIL]` line with the measured numbers.
//!
//! Run `cargo test --test acceptance -- --nocapture` to see every line;
//! without `--nocapture` the lines surface only for failing criteria.

use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use deflicker::evaluation::{evaluate, save_report, warp_error_video};
use deflicker::flow::{occlusion_mask, FlowProvider, OcclusionThresholds};
use deflicker::perception::{perceptual_loss, perceptual_term, FeatureExtractor, PerceptualMetric};
use deflicker::synthgen::{
    apply_adjust, apply_flicker, flow_between, generate_sequence, ideal_consistent_output,
    BaseImage, FlickerMode, FlickerSpec, FrameAdjust, MotionModel, MotionSpec,
};
use deflicker::temporal_losses::{
    long_term_loss, masked_l1_term, short_term_loss, total_loss, warp_l1_term, LossWeights,
};
use deflicker::tensor::Tape;
use deflicker::training::{
    run_sweep, train, unroll_window, Dataset, FlowBackend, SweepSpec, TrainOptions,
    TrainingConfig, TrainingItem, Window, WindowPlan,
};
use deflicker::transform_net::{NetworkConfig, TransformNet};
use deflicker::video_data::{read_flo, write_flo, FlowField, Frame, FrameSequence};
use deflicker::warping::{bilinear_warp, visibility_mask, WarpConfig};

fn criterion(ok: bool, name: &str, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("[{tag}] {name}: {detail}");
    assert!(ok, "{name}: {detail}");
}

fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
    Array3::from_shape_simple_fn((3, h, w), || rng.random_range(0.1..0.9))
}

/// A moving flickered sequence plus its exact flow provider, the shared
/// fixture for the training criteria.
fn toy_scene(frames: usize, size: usize) -> (FrameSequence, FrameSequence, FrameSequence, MotionSpec) {
    let motion = MotionSpec {
        base: BaseImage::Checkerboard { cell: 8 },
        motion: MotionModel::Translation { dx: 2.0, dy: 0.0 },
        frames,
        height: size,
        width: size,
        seed: 4,
    };
    let flicker = FlickerSpec {
        mode: FlickerMode::BrightnessSinusoid { period: 5.0 },
        amplitude: 0.2,
        seed: 0,
    };
    let sequence = generate_sequence(&motion).expect("valid spec");
    let (processed, adjustments) = apply_flicker(&sequence.frames, &flicker).expect("valid spec");
    let ideal = ideal_consistent_output(&sequence.frames, &adjustments).expect("schedule");
    (sequence.frames, processed, ideal, motion)
}

fn toy_training_config(iterations: usize) -> TrainingConfig {
    TrainingConfig {
        network: NetworkConfig {
            base_channels: 8,
            residual_blocks: 2,
            kernel_size: 3,
        },
        unroll: 10,
        batch_size: 1,
        crop: 48,
        iterations,
        learning_rate: 1e-3,
        weights: LossWeights::default(),
        feature_extractor: FeatureExtractor::Identity,
        flow_backend: FlowBackend::Analytic,
        seed: 11,
        checkpoint_every: 0,
        truncate_temporal_grad: false,
    }
}

#[test]
fn criterion_1_closed_form_operation_oracles() {
    let started = Instant::now();

    // Bilinear warp: half-pixel shift averages horizontal neighbors and
    // clamps at the border.
    let frame = Array3::from_shape_vec(
        (3, 2, 2),
        vec![
            0.1, 0.3, 0.5, 0.7, //
            0.2, 0.4, 0.6, 0.8, //
            0.0, 1.0, 0.5, 0.25,
        ],
    )
    .expect("shape");
    let flow = FlowField::from_uv(
        Array2::from_elem((2, 2), 0.5f32),
        Array2::zeros((2, 2)),
    )
    .expect("shape");
    let warped = bilinear_warp(&frame, &flow).expect("dims match");
    let mut warp_exact = true;
    for c in 0..3 {
        for y in 0..2 {
            let mid = 0.5 * (frame[[c, y, 0]] + frame[[c, y, 1]]);
            warp_exact &= (warped[[c, y, 0]] - mid).abs() < 1e-12;
            warp_exact &= (warped[[c, y, 1]] - frame[[c, y, 1]]).abs() < 1e-12;
        }
    }

    // Visibility weights: exactly 1 where frames agree, and
    // exp(-alpha * squared difference) where they do not.
    let a = Array3::from_elem((3, 3, 3), 0.4);
    let mut b = a.clone();
    let all = visibility_mask(&a, &a, WarpConfig::default()).expect("dims");
    b[[0, 1, 1]] = 1.0;
    b[[1, 1, 1]] = 0.0;
    let masked = visibility_mask(&a, &b, WarpConfig::default()).expect("dims");
    let expected_weight = (-50.0_f64 * (0.36 + 0.16)).exp();
    let visibility_ok = all.iter().all(|&m| m == 1.0)
        && (masked[[1, 1]] - expected_weight).abs() < 1e-15
        && masked.iter().filter(|&&m| m == 1.0).count() == 8;

    // Single-pixel short-term loss: mask 0.9 times |0.7 - 0.2| under zero
    // flow.
    let o_t = Array3::from_elem((3, 1, 1), 0.7);
    let o_prev = Array3::from_elem((3, 1, 1), 0.2);
    let zero_flow = FlowField::zeros(1, 1);
    let mask = Array2::from_elem((1, 1), 0.9);
    let st = short_term_loss(&o_t, &o_prev, &zero_flow, &mask).expect("dims");
    let st_ok = (st - 3.0 * 0.9 * 0.5).abs() < 1e-12;

    // Three-frame long-term loss is the sum of both anchored terms.
    let seq = FrameSequence::new(
        vec![
            Array3::from_elem((3, 1, 1), 0.2),
            Array3::from_elem((3, 1, 1), 0.3),
            Array3::from_elem((3, 1, 1), 0.4),
        ],
        deflicker::video_data::BitDepth::Sixteen,
    )
    .expect("frames agree");
    let ones = Array2::from_elem((1, 1), 1.0);
    let lt = long_term_loss(
        &seq,
        &[FlowField::zeros(1, 1), FlowField::zeros(1, 1)],
        &[ones.clone(), ones.clone()],
    )
    .expect("dims");
    let lt_ok = (lt - 3.0 * (0.1 + 0.2)).abs() < 1e-12;

    // Weighted total.
    let only_p = LossWeights {
        lambda_p: 1.0,
        lambda_st: 0.0,
        lambda_lt: 0.0,
    };
    let t1 = total_loss(0.5, 9.0, 9.0, &only_p).expect("weights");
    let t2 = total_loss(0.2, 0.01, 0.02, &LossWeights::default()).expect("weights");
    let total_ok = t1 == 0.5 && (t2 - 5.0).abs() < 1e-12;

    // Identity-feature content loss: plain L1 over frames 2..T.
    let stack = FeatureExtractor::Identity.load().expect("no file needed");
    let p = FrameSequence::new(
        vec![
            Array3::from_elem((3, 2, 2), 0.5),
            Array3::from_elem((3, 2, 2), 0.5),
        ],
        deflicker::video_data::BitDepth::Sixteen,
    )
    .expect("frames agree");
    let o = FrameSequence::new(
        vec![
            Array3::from_elem((3, 2, 2), 0.5),
            Array3::from_elem((3, 2, 2), 0.55),
        ],
        deflicker::video_data::BitDepth::Sixteen,
    )
    .expect("frames agree");
    let lp = perceptual_loss(&o, &p, &stack).expect("aligned");
    let lp_ok = (lp - 12.0 * 0.05).abs() < 1e-12;

    // Analytic translation flow: aligning `reference` onto frame t's grid
    // displaces by (reference - t) times the per-frame step.
    let spec = MotionSpec {
        base: BaseImage::Checkerboard { cell: 4 },
        motion: MotionModel::Translation { dx: 2.0, dy: -1.0 },
        frames: 5,
        height: 12,
        width: 12,
        seed: 0,
    };
    let f = flow_between(&spec, 2, 4);
    let flow_ok = f.u.iter().all(|&u| u == 4.0) && f.v.iter().all(|&v| v == -2.0);

    // Affine adjustment: gain and bias apply per channel and clamp.
    let frame = Array3::from_elem((3, 1, 1), 0.5);
    let adjusted = apply_adjust(
        &frame,
        &FrameAdjust::Affine {
            gain: [1.2, 2.5, 1.0],
            bias: [0.01, 0.0, -0.6],
        },
    );
    let adjust_ok = (adjusted[[0, 0, 0]] - 0.61).abs() < 1e-12
        && adjusted[[1, 0, 0]] == 1.0
        && adjusted[[2, 0, 0]] == 0.0;

    let elapsed = started.elapsed();
    let ok = warp_exact
        && visibility_ok
        && st_ok
        && lt_ok
        && total_ok
        && lp_ok
        && flow_ok
        && adjust_ok
        && elapsed.as_secs() < 60;
    criterion(
        ok,
        "criterion 1, closed-form operation oracles",
        &format!(
            "warp {warp_exact}, visibility {visibility_ok}, short {st_ok}, long {lt_ok}, \
             total {total_ok}, content {lp_ok}, flow {flow_ok}, adjust {adjust_ok}, \
             {:.2?} (limit 60s)",
            elapsed
        ),
    );
}

fn relative_error(fd: f64, grad: f64, floor: f64) -> f64 {
    (fd - grad).abs() / fd.abs().max(grad.abs()).max(floor)
}

#[test]
fn criterion_2_finite_difference_gradients() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    // Masked warped L1 term: check dL/d(o_t) and dL/d(o_reference) on
    // every element against central differences.
    let o_ref = random_frame(&mut rng, 6, 6);
    let flow = FlowField::from_uv(
        Array2::from_elem((6, 6), 0.3f32),
        Array2::from_elem((6, 6), -0.2f32),
    )
    .expect("shape");
    // Keep |o_t - warp(o_ref)| away from the L1 kink so finite
    // differences stay one-sided.
    let warped = bilinear_warp(&o_ref, &flow).expect("dims");
    let o_t = &warped + &Array3::from_shape_simple_fn((3, 6, 6), || {
        let s: f64 = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        s * rng.random_range(0.02..0.1)
    });
    let mask = Array2::from_shape_simple_fn((6, 6), || {
        if rng.random_bool(0.8) {
            1.0
        } else {
            0.0
        }
    });
    let term_value = |ot: &Frame, oref: &Frame| -> f64 {
        let mut tape = Tape::new();
        let a = tape.leaf(ot.clone().into_dyn(), false);
        let b = tape.leaf(oref.clone().into_dyn(), false);
        let term = warp_l1_term(&mut tape, a, b, &flow, &mask);
        tape.scalar(term)
    };
    let mut tape = Tape::new();
    let a = tape.leaf(o_t.clone().into_dyn(), true);
    let b = tape.leaf(o_ref.clone().into_dyn(), true);
    let term = warp_l1_term(&mut tape, a, b, &flow, &mask);
    let grads = tape.backward(term);
    let grad_a = grads[a.index()].clone().expect("requires grad");
    let grad_b = grads[b.index()].clone().expect("requires grad");

    let h = 1e-6;
    let mut warp_max_rel: f64 = 0.0;
    for flat in 0..o_t.len() {
        let idx = (flat / 36, (flat / 6) % 6, flat % 6);
        let mut plus = o_t.clone();
        plus[idx] += h;
        let mut minus = o_t.clone();
        minus[idx] -= h;
        let fd = (term_value(&plus, &o_ref) - term_value(&minus, &o_ref)) / (2.0 * h);
        let g = grad_a[[idx.0, idx.1, idx.2]];
        if fd != 0.0 || g != 0.0 {
            warp_max_rel = warp_max_rel.max(relative_error(fd, g, 1e-6));
        }

        let mut plus = o_ref.clone();
        plus[idx] += h;
        let mut minus = o_ref.clone();
        minus[idx] -= h;
        let fd = (term_value(&o_t, &plus) - term_value(&o_t, &minus)) / (2.0 * h);
        let g = grad_b[[idx.0, idx.1, idx.2]];
        if fd != 0.0 || g != 0.0 {
            warp_max_rel = warp_max_rel.max(relative_error(fd, g, 1e-6));
        }
    }

    // Masked L1 without warping.
    let x = random_frame(&mut rng, 4, 4);
    let y = &x + &Array3::from_elem((3, 4, 4), 0.05);
    let l1_value = |xv: &Frame| -> f64 {
        let mut tape = Tape::new();
        let a = tape.leaf(xv.clone().into_dyn(), false);
        let b = tape.leaf(y.clone().into_dyn(), false);
        let mask = Array2::from_elem((4, 4), 0.7);
        let term = masked_l1_term(&mut tape, a, b, &mask);
        tape.scalar(term)
    };
    let mut tape = Tape::new();
    let a = tape.leaf(x.clone().into_dyn(), true);
    let b = tape.leaf(y.clone().into_dyn(), true);
    let l1_mask = Array2::from_elem((4, 4), 0.7);
    let term = masked_l1_term(&mut tape, a, b, &l1_mask);
    let grad = tape.backward(term)[a.index()].clone().expect("requires grad");
    let mut l1_max_rel: f64 = 0.0;
    for flat in 0..x.len() {
        let idx = (flat / 16, (flat / 4) % 4, flat % 4);
        let mut plus = x.clone();
        plus[idx] += h;
        let mut minus = x.clone();
        minus[idx] -= h;
        let fd = (l1_value(&plus) - l1_value(&minus)) / (2.0 * h);
        l1_max_rel = l1_max_rel.max(relative_error(fd, grad[[idx.0, idx.1, idx.2]], 1e-6));
    }

    // Feature-space content term through the random conv stack.
    let stack = FeatureExtractor::FixedRandom { seed: 1 }
        .load()
        .expect("no file needed");
    let p_frame = random_frame(&mut rng, 8, 8);
    let o_frame = random_frame(&mut rng, 8, 8);
    let feature_value = |ov: &Frame| -> f64 {
        let mut tape = Tape::new();
        let bound = stack.bind(&mut tape);
        let o = tape.leaf(ov.clone().into_dyn(), false);
        let p = tape.leaf(p_frame.clone().into_dyn(), false);
        let term = perceptual_term(&mut tape, &bound, o, p);
        tape.scalar(term)
    };
    let mut tape = Tape::new();
    let bound = stack.bind(&mut tape);
    let o = tape.leaf(o_frame.clone().into_dyn(), true);
    let p = tape.leaf(p_frame.clone().into_dyn(), false);
    let term = perceptual_term(&mut tape, &bound, o, p);
    let grad = tape.backward(term)[o.index()].clone().expect("requires grad");
    let mut feat_max_rel: f64 = 0.0;
    for flat in (0..o_frame.len()).step_by(7) {
        let idx = (flat / 64, (flat / 8) % 8, flat % 8);
        let mut plus = o_frame.clone();
        plus[idx] += h;
        let mut minus = o_frame.clone();
        minus[idx] -= h;
        let fd = (feature_value(&plus) - feature_value(&minus)) / (2.0 * h);
        feat_max_rel = feat_max_rel.max(relative_error(fd, grad[[idx.0, idx.1, idx.2]], 1e-6));
    }

    // End to end: the full unrolled objective against weight perturbations.
    let (input, processed, _, motion) = toy_scene(5, 24);
    let item = TrainingItem {
        input,
        processed,
        flows: FlowProvider::Analytic(motion),
    };
    let cfg = TrainingConfig {
        network: NetworkConfig {
            base_channels: 4,
            residual_blocks: 1,
            kernel_size: 3,
        },
        unroll: 3,
        crop: 16,
        learning_rate: 1e-3,
        feature_extractor: FeatureExtractor::Identity,
        ..TrainingConfig::default()
    };
    let mut net = TransformNet::init(cfg.network, 3).expect("valid config");
    // The output layer initializes to zero; randomize it so the residual
    // path influences the loss.
    {
        let out_w = net.tensors.get_mut("out.weight").expect("layout");
        let mut wrng = ChaCha8Rng::seed_from_u64(9);
        out_w.mapv_inplace(|_| wrng.random_range(-0.05..0.05));
    }
    let features = cfg.feature_extractor.load().expect("no file needed");
    let plan = WindowPlan {
        item: 0,
        start: 1,
        y0: 3,
        x0: 2,
    };
    let window = Window::from_item(&item, &cfg, plan).expect("window fits");
    let (_, grads) = unroll_window(&net, &cfg, &features, &window).expect("unroll");

    let wh = 1e-5;
    let mut end_max_rel: f64 = 0.0;
    for (name, flat_index) in [
        ("out.bias", 0usize),
        ("fuse.weight", 1),
        ("lstm.gates.weight", 2),
        ("enc_a.down1.weight", 3),
        ("enc_b.down2.bias", 1),
    ] {
        let grad = grads.get(name).expect("gradient present");
        let g = grad.as_slice().expect("standard layout")[flat_index];
        let total_at = |delta: f64| -> f64 {
            let mut perturbed = net.clone();
            let tensor = perturbed.tensors.get_mut(name).expect("layout");
            tensor.as_slice_mut().expect("standard layout")[flat_index] += delta;
            let (breakdown, _) =
                unroll_window(&perturbed, &cfg, &features, &window).expect("unroll");
            breakdown.total
        };
        let fd = (total_at(wh) - total_at(-wh)) / (2.0 * wh);
        end_max_rel = end_max_rel.max(relative_error(fd, g, 1e-6));
    }

    let elapsed = started.elapsed();
    let ok = warp_max_rel < 1e-4
        && l1_max_rel < 1e-4
        && feat_max_rel < 1e-4
        && end_max_rel < 1e-3
        && elapsed.as_secs() < 300;
    criterion(
        ok,
        "criterion 2, gradients match finite differences",
        &format!(
            "warp term {warp_max_rel:.2e}, masked L1 {l1_max_rel:.2e}, features \
             {feat_max_rel:.2e} (limit 1e-4), end-to-end {end_max_rel:.2e} (limit 1e-3), \
             {:.2?} (limit 300s)",
            elapsed
        ),
    );
}

#[test]
fn criterion_3_network_is_identity_at_initialization() {
    let (input, processed, _, motion) = toy_scene(6, 32);
    let net = TransformNet::init(
        NetworkConfig {
            base_channels: 8,
            residual_blocks: 2,
            kernel_size: 3,
        },
        0,
    )
    .expect("valid config");
    let output = net.process_video(&input, &processed).expect("aligned");

    let mut frames_equal = true;
    for t in 1..=processed.len() {
        frames_equal &= output.frame(t) == processed.frame(t);
    }

    let stack = FeatureExtractor::Identity.load().expect("no file needed");
    let lp = perceptual_loss(&output, &processed, &stack).expect("aligned");

    let provider = FlowProvider::Analytic(motion);
    let (e_out, _) = warp_error_video(&output, &provider).expect("flows available");
    let (e_proc, _) = warp_error_video(&processed, &provider).expect("flows available");

    let ok = frames_equal && lp == 0.0 && e_out == e_proc;
    criterion(
        ok,
        "criterion 3, untrained network is the identity",
        &format!(
            "frames equal {frames_equal}, content loss {lp:?}, \
             E_warp {e_out:.6} == {e_proc:.6}"
        ),
    );
}

#[test]
fn criterion_4_two_frame_videos_make_both_temporal_losses_agree() {
    let mut worst: f64 = 0.0;
    for seed in [1u64, 2, 3] {
        let motion = MotionSpec {
            base: BaseImage::NoiseTexture { scale: 4 },
            motion: MotionModel::Translation { dx: 1.5, dy: -0.5 },
            frames: 2,
            height: 20,
            width: 20,
            seed,
        };
        let flicker = FlickerSpec {
            mode: FlickerMode::ColorJitter,
            amplitude: 0.2,
            seed,
        };
        let sequence = generate_sequence(&motion).expect("valid spec");
        let (processed, _) = apply_flicker(&sequence.frames, &flicker).expect("valid spec");
        let item = TrainingItem {
            input: sequence.frames.clone(),
            processed,
            flows: FlowProvider::Analytic(motion),
        };
        let cfg = TrainingConfig {
            network: NetworkConfig {
                base_channels: 4,
                residual_blocks: 1,
                kernel_size: 3,
            },
            unroll: 2,
            crop: 16,
            feature_extractor: FeatureExtractor::Identity,
            ..TrainingConfig::default()
        };
        let mut net = TransformNet::init(cfg.network, seed).expect("valid config");
        let out_w = net.tensors.get_mut("out.weight").expect("layout");
        let mut wrng = ChaCha8Rng::seed_from_u64(seed);
        out_w.mapv_inplace(|_| wrng.random_range(-0.05..0.05));

        let window = Window::from_item(
            &item,
            &cfg,
            WindowPlan {
                item: 0,
                start: 1,
                y0: 1,
                x0: 2,
            },
        )
        .expect("window fits");
        let (breakdown, _) = unroll_window(&net, &cfg, &features_of(&cfg), &window).expect("unroll");
        assert!(breakdown.l_st > 0.0, "fixture should have temporal error");
        worst = worst.max((breakdown.l_st - breakdown.l_lt).abs());
    }
    let ok = worst <= 1e-9;
    criterion(
        ok,
        "criterion 4, two-frame videos score identically on both temporal losses",
        &format!("max |short - long| = {worst:.2e} (limit 1e-9)"),
    );
}

fn features_of(cfg: &TrainingConfig) -> deflicker::perception::FeatureStack {
    cfg.feature_extractor.load().expect("no file needed")
}

#[test]
fn criterion_5_training_stabilizes_flickered_footage() {
    let (input, processed, ideal, motion) = toy_scene(10, 48);
    let dataset = Dataset {
        items: vec![TrainingItem {
            input: input.clone(),
            processed: processed.clone(),
            flows: FlowProvider::Analytic(motion.clone()),
        }],
    };
    let cfg = toy_training_config(300);
    let outcome = train(&cfg, &dataset, &TrainOptions::default()).expect("training converges");
    let output = outcome
        .net
        .process_video(&input, &processed)
        .expect("aligned");

    let provider = FlowProvider::Analytic(motion);
    let (e_out, _) = warp_error_video(&output, &provider).expect("flows available");
    let (e_proc, _) = warp_error_video(&processed, &provider).expect("flows available");

    let metric = PerceptualMetric::new(&FeatureExtractor::FixedRandom { seed: 0 })
        .expect("no file needed");
    let d_out = metric.sequence_distance(&processed, &output).expect("aligned");
    let d_ideal = metric.sequence_distance(&processed, &ideal).expect("aligned");

    let ok = e_out <= 0.5 * e_proc && d_out <= 3.0 * d_ideal;
    criterion(
        ok,
        "criterion 5, training halves flicker without drifting",
        &format!(
            "E_warp {e_out:.6} vs input {e_proc:.6} (limit half), \
             drift {d_out:.6e} vs ideal {d_ideal:.6e} (limit 3x)"
        ),
    );
}

#[test]
fn criterion_6_weight_ratio_trades_stability_for_drift() {
    let (input, processed, _, motion) = toy_scene(10, 48);
    let item = TrainingItem {
        input,
        processed,
        flows: FlowProvider::Analytic(motion),
    };
    let dataset = Dataset {
        items: vec![item],
    };
    let spec = SweepSpec {
        pairs: vec![(100.0, 100.0), (100.0, 10.0), (100.0, 1.0)],
        base: toy_training_config(150),
    };
    let metric = PerceptualMetric::new(&FeatureExtractor::FixedRandom { seed: 0 })
        .expect("no file needed");
    let rows = run_sweep(&spec, &dataset, &dataset, &metric, &TrainOptions::default())
        .expect("sweep completes");

    let ratios: Vec<f64> = rows.iter().map(|r| r.r).collect();
    let e: Vec<f64> = rows.iter().map(|r| r.e_warp).collect();
    let d: Vec<f64> = rows.iter().map(|r| r.d_perceptual).collect();
    let sorted = ratios.windows(2).all(|w| w[0] < w[1]);
    let e_monotone = e.windows(2).all(|w| w[1] <= w[0]);
    let d_monotone = d.windows(2).all(|w| w[1] >= w[0]);

    let ok = sorted && e_monotone && d_monotone;
    criterion(
        ok,
        "criterion 6, heavier temporal weighting is stabler but drifts more",
        &format!(
            "ratios {ratios:?}, E_warp {e:?} non-increasing {e_monotone}, \
             drift {d:?} non-decreasing {d_monotone}"
        ),
    );
}

#[test]
fn criterion_7_metric_and_format_oracles() {
    // Closed-form warping error of a statically framed gain flicker:
    // every pair's error is (g_t - g_{t+1})^2 times the mean squared
    // channel intensity of the shared base frame.
    let motion = MotionSpec {
        base: BaseImage::Checkerboard { cell: 4 },
        motion: MotionModel::Translation { dx: 0.0, dy: 0.0 },
        frames: 6,
        height: 16,
        width: 16,
        seed: 0,
    };
    let amplitude = 0.2;
    let period = 5.0;
    let flicker = FlickerSpec {
        mode: FlickerMode::BrightnessSinusoid { period },
        amplitude,
        seed: 0,
    };
    let sequence = generate_sequence(&motion).expect("valid spec");
    let (processed, _) = apply_flicker(&sequence.frames, &flicker).expect("valid spec");
    let provider = FlowProvider::Analytic(motion);
    let (e_measured, pairs) = warp_error_video(&processed, &provider).expect("flows available");

    let base = sequence.frames.frame(1);
    let (_, h, w) = base.dim();
    let mean_sq = base.mapv(|v| v * v).sum() / (h * w) as f64;
    let gain = |t: usize| 1.0 + amplitude * (2.0 * std::f64::consts::PI * t as f64 / period).sin();
    let mut expected = 0.0;
    let mut pair_max_err: f64 = 0.0;
    for pair in &pairs {
        let e = (gain(pair.t) - gain(pair.t + 1)).powi(2) * mean_sq;
        pair_max_err = pair_max_err.max((pair.error - e).abs());
        expected += e;
    }
    expected /= pairs.len() as f64;
    let closed_form_ok = (e_measured - expected).abs() < 1e-6 && pair_max_err < 1e-6;

    // Flow files survive a write/read round trip bit for bit.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let flow = FlowField::from_uv(
        Array2::from_shape_simple_fn((7, 5), || rng.random_range(-30.0f32..30.0)),
        Array2::from_shape_simple_fn((7, 5), || rng.random_range(-30.0f32..30.0)),
    )
    .expect("shape");
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("pair.flo");
    write_flo(&path, &flow).expect("writable");
    let back = read_flo(&path).expect("readable");
    let flo_ok = flow
        .u
        .iter()
        .zip(back.u.iter())
        .all(|(a, b)| a.to_bits() == b.to_bits())
        && flow
            .v
            .iter()
            .zip(back.v.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());

    // Consistency-based occlusion flips exactly where the mismatch
    // exceeds ratio * magnitude + offset.
    let thresholds = OcclusionThresholds::default();
    let case = |mag: f64| -> f64 {
        let fw = FlowField::zeros(4, 4);
        let bw = FlowField::from_uv(
            Array2::from_elem((4, 4), mag as f32),
            Array2::zeros((4, 4)),
        )
        .expect("shape");
        occlusion_mask(&fw, &bw, thresholds).expect("dims")[[2, 2]]
    };
    // 0.7^2 = 0.49 <= 0.01 * 0.49 + 0.5, while 0.72^2 = 0.5184 exceeds
    // 0.01 * 0.5184 + 0.5.
    let opposite = {
        let fw = FlowField::from_uv(
            Array2::from_elem((4, 4), 1.5f32),
            Array2::zeros((4, 4)),
        )
        .expect("shape");
        let bw = FlowField::from_uv(
            Array2::from_elem((4, 4), -1.5f32),
            Array2::zeros((4, 4)),
        )
        .expect("shape");
        occlusion_mask(&fw, &bw, thresholds).expect("dims")[[2, 2]]
    };
    let occlusion_ok = case(0.7) == 1.0 && case(0.72) == 0.0 && opposite == 1.0;

    let ok = closed_form_ok && flo_ok && occlusion_ok;
    criterion(
        ok,
        "criterion 7, metric oracles and file formats",
        &format!(
            "closed-form E_warp |{e_measured:.8} - {expected:.8}| < 1e-6: {closed_form_ok}, \
             .flo bit-exact {flo_ok}, occlusion thresholds {occlusion_ok}"
        ),
    );
}

#[test]
fn criterion_8_runs_are_bit_exact() {
    let motion = MotionSpec {
        base: BaseImage::NoiseTexture { scale: 4 },
        motion: MotionModel::Affine {
            dx: 1.0,
            dy: 0.5,
            rotate_deg: 0.4,
            scale: 1.002,
        },
        frames: 5,
        height: 24,
        width: 24,
        seed: 2,
    };
    let flicker = FlickerSpec {
        mode: FlickerMode::ColorJitter,
        amplitude: 0.15,
        seed: 3,
    };
    let sequence = generate_sequence(&motion).expect("valid spec");
    let (processed, _) = apply_flicker(&sequence.frames, &flicker).expect("valid spec");
    let dataset = Dataset {
        items: vec![TrainingItem {
            input: sequence.frames.clone(),
            processed: processed.clone(),
            flows: FlowProvider::Analytic(motion.clone()),
        }],
    };
    let cfg = TrainingConfig {
        network: NetworkConfig {
            base_channels: 4,
            residual_blocks: 1,
            kernel_size: 3,
        },
        unroll: 3,
        crop: 16,
        iterations: 8,
        learning_rate: 1e-3,
        checkpoint_every: 4,
        feature_extractor: FeatureExtractor::Identity,
        seed: 7,
        ..TrainingConfig::default()
    };

    let run = |dir: &std::path::Path| -> (Vec<u8>, Vec<u8>, Vec<u8>, Vec<u8>, Vec<u8>) {
        let log = dir.join("train.log");
        let opts = TrainOptions {
            checkpoint_dir: Some(dir),
            resume: None,
            log_path: Some(&log),
        };
        let outcome = train(&cfg, &dataset, &opts).expect("training converges");
        let output = outcome
            .net
            .process_video(&sequence.frames, &processed)
            .expect("aligned");
        let frames_dir = dir.join("frames");
        deflicker::video_data::save_frame_sequence(&frames_dir, &output).expect("writable");
        let provider = FlowProvider::Analytic(motion.clone());
        let metric = PerceptualMetric::new(&FeatureExtractor::FixedRandom { seed: 0 })
            .expect("no file needed");
        let report = evaluate(&output, &processed, &provider, &metric).expect("aligned");
        save_report(&report, &dir.join("report")).expect("writable");
        (
            std::fs::read(dir.join("model.ckpt")).expect("written"),
            std::fs::read(dir.join("ckpt_000004.ckpt")).expect("written"),
            std::fs::read(&log).expect("written"),
            std::fs::read(frames_dir.join("frame_00003.png")).expect("written"),
            std::fs::read(dir.join("report.json")).expect("written"),
        )
    };

    let dir_a = tempfile::tempdir().expect("tempdir");
    let dir_b = tempfile::tempdir().expect("tempdir");
    let a = run(dir_a.path());
    let b = run(dir_b.path());

    let models = a.0 == b.0;
    let checkpoints = a.1 == b.1;
    let logs = a.2 == b.2;
    let frames = a.3 == b.3;
    let reports = a.4 == b.4;
    let ok = models && checkpoints && logs && frames && reports;
    criterion(
        ok,
        "criterion 8, repeated runs are byte-identical",
        &format!(
            "model {models}, mid checkpoint {checkpoints}, log {logs}, \
             frames {frames}, report {reports}"
        ),
    );
}
