//! Unrolled recurrent training, checkpointing, and the weight-ratio sweep.
//!
//! Each iteration samples training windows (a temporal slice plus a square
//! spatial crop), unrolls the network over the window on one gradient tape,
//! and combines three per-element-mean loss components: perceptual fidelity
//! to the processed frames, short-term warping error between adjacent
//! outputs, and long-term warping error against the window's first output.
//! Per-element means keep the loss weights meaningful across crop sizes.
//!
//! Determinism: single-threaded, and every iteration derives its sampling
//! randomness from the seed and the iteration index alone, so interrupting
//! and resuming from a checkpoint reproduces the uninterrupted run bit for
//! bit.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use ndarray::{ArrayD, Zip};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{EstimatorParams, FlowProvider};
use crate::perception::{perceptual_term, FeatureExtractor, FeatureStack};
use crate::temporal_losses::{warp_l1_term, LossWeights};
use crate::tensor::Tape;
use crate::tensor_store;
use crate::transform_net::{BoundNet, NetworkConfig, TransformNet, PARAMS_VERSION};
use crate::video_data::{FlowField, Frame, FrameSequence, Mask};
use crate::warping::{bilinear_warp, visibility_mask, WarpConfig};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Which flow source training and evaluation consult.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FlowBackend {
    /// Exact flow from the synthetic motion specs (requires synthetic data).
    Analytic,
    /// Precomputed `.flo` files stored next to the frames.
    File,
    /// On-the-fly estimation from the frames.
    Estimated {
        #[serde(default)]
        params: EstimatorParams,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub network: NetworkConfig,
    /// Window length T: how many frames the recurrence is unrolled over.
    pub unroll: usize,
    /// Windows per iteration; gradients are averaged.
    pub batch_size: usize,
    /// Square crop edge, a multiple of 4.
    pub crop: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub weights: LossWeights,
    /// Feature space of the perceptual loss (not of the evaluation metric).
    pub feature_extractor: FeatureExtractor,
    pub flow_backend: FlowBackend,
    pub seed: u64,
    /// Checkpoint every N iterations; 0 writes only the final model.
    pub checkpoint_every: usize,
    /// Detach the fed-back output between steps. Loss terms still couple
    /// adjacent outputs; only the recurrent input stops gradients.
    pub truncate_temporal_grad: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            network: NetworkConfig::default(),
            unroll: 10,
            batch_size: 1,
            crop: 32,
            iterations: 500,
            learning_rate: 1e-4,
            weights: LossWeights::default(),
            feature_extractor: FeatureExtractor::Identity,
            flow_backend: FlowBackend::Analytic,
            seed: 0,
            checkpoint_every: 0,
            truncate_temporal_grad: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.weights.validate()?;
        if self.unroll < 2 {
            return Err(Error::Config(format!(
                "unroll must be at least 2, got {}",
                self.unroll
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.crop < 4 || self.crop % 4 != 0 {
            return Err(Error::Config(format!(
                "crop must be a positive multiple of 4, got {}",
                self.crop
            )));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be finite and positive, got {}",
                self.learning_rate
            )));
        }
        if let FlowBackend::Estimated { params } = &self.flow_backend {
            params.validate()?;
        }
        Ok(())
    }
}

/// One aligned (original, processed) sequence pair and its flow source.
#[derive(Debug, Clone)]
pub struct TrainingItem {
    pub input: FrameSequence,
    pub processed: FrameSequence,
    pub flows: FlowProvider,
}

impl TrainingItem {
    pub fn validate(&self) -> Result<()> {
        if self.input.len() != self.processed.len()
            || self.input.frame(1).dim() != self.processed.frame(1).dim()
        {
            return Err(Error::DimensionMismatch {
                context: "training item".into(),
                expected: format!(
                    "{} frames of {:?}",
                    self.input.len(),
                    self.input.frame(1).dim()
                ),
                actual: format!(
                    "{} frames of {:?}",
                    self.processed.len(),
                    self.processed.frame(1).dim()
                ),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub items: Vec<TrainingItem>,
}

impl Dataset {
    /// Indices of items long and large enough for the configured windows.
    fn eligible(&self, cfg: &TrainingConfig) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, item)| {
                item.input.len() >= cfg.unroll
                    && item.input.height() >= cfg.crop
                    && item.input.width() >= cfg.crop
            })
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self, cfg: &TrainingConfig) -> Result<()> {
        for item in &self.items {
            item.validate()?;
        }
        if self.eligible(cfg).is_empty() {
            return Err(Error::Config(format!(
                "no training sequence is at least {} frames of {}x{}",
                cfg.unroll, cfg.crop, cfg.crop
            )));
        }
        Ok(())
    }
}

/// Where a window comes from: item index, first frame (1-based), crop
/// origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowPlan {
    pub item: usize,
    pub start: usize,
    pub y0: usize,
    pub x0: usize,
}

/// Draws a window location uniformly over eligible items, valid starts and
/// crop origins. Windows never cross sequence boundaries by construction.
pub fn plan_window(
    rng: &mut impl Rng,
    dataset: &Dataset,
    cfg: &TrainingConfig,
) -> Result<WindowPlan> {
    let eligible = dataset.eligible(cfg);
    if eligible.is_empty() {
        return Err(Error::Config("no eligible training sequences".into()));
    }
    let item = eligible[rng.random_range(0..eligible.len())];
    let seq = &dataset.items[item].input;
    let start = rng.random_range(1..=seq.len() - cfg.unroll + 1);
    let y0 = rng.random_range(0..=seq.height() - cfg.crop);
    let x0 = rng.random_range(0..=seq.width() - cfg.crop);
    Ok(WindowPlan {
        item,
        start,
        y0,
        x0,
    })
}

fn crop_frame(frame: &Frame, y0: usize, x0: usize, size: usize) -> Frame {
    frame
        .slice(ndarray::s![.., y0..y0 + size, x0..x0 + size])
        .to_owned()
}

fn crop_flow(flow: &FlowField, y0: usize, x0: usize, size: usize) -> FlowField {
    FlowField {
        u: flow.u.slice(ndarray::s![y0..y0 + size, x0..x0 + size]).to_owned(),
        v: flow.v.slice(ndarray::s![y0..y0 + size, x0..x0 + size]).to_owned(),
    }
}

/// A materialized training window: cropped frames plus the flows and
/// visibility masks every loss term needs. Index `j` of the per-pair lists
/// belongs to frame `start + j + 1` of the source sequence.
#[derive(Debug, Clone)]
pub struct Window {
    pub input: Vec<Frame>,
    pub processed: Vec<Frame>,
    /// Flow aligning frame t-1 onto frame t, for t = 2..=T of the window.
    pub flows_prev: Vec<FlowField>,
    /// Flow aligning the window's first frame onto frame t, t = 2..=T.
    pub flows_first: Vec<FlowField>,
    pub masks_prev: Vec<Mask>,
    pub masks_first: Vec<Mask>,
}

impl Window {
    /// Cuts a window out of a training item. Flows are queried at full
    /// resolution and cropped, so displacements keep their meaning; masks
    /// are computed from the cropped originals.
    pub fn from_item(item: &TrainingItem, cfg: &TrainingConfig, plan: WindowPlan) -> Result<Self> {
        let t_count = cfg.unroll;
        let alpha = WarpConfig::default();
        let frame_of = |seq: &FrameSequence, j: usize| {
            crop_frame(seq.frame(plan.start + j), plan.y0, plan.x0, cfg.crop)
        };
        let input: Vec<Frame> = (0..t_count).map(|j| frame_of(&item.input, j)).collect();
        let processed: Vec<Frame> = (0..t_count).map(|j| frame_of(&item.processed, j)).collect();

        let mut flows_prev = Vec::with_capacity(t_count - 1);
        let mut flows_first = Vec::with_capacity(t_count - 1);
        let mut masks_prev = Vec::with_capacity(t_count - 1);
        let mut masks_first = Vec::with_capacity(t_count - 1);
        for j in 1..t_count {
            let t_abs = plan.start + j;
            let prev = crop_flow(
                &item.flows.flow(&item.input, t_abs, t_abs - 1)?,
                plan.y0,
                plan.x0,
                cfg.crop,
            );
            let first = if j == 1 {
                prev.clone()
            } else {
                crop_flow(
                    &item.flows.flow(&item.input, t_abs, plan.start)?,
                    plan.y0,
                    plan.x0,
                    cfg.crop,
                )
            };
            let warped_prev = bilinear_warp(&input[j - 1], &prev)?;
            let warped_first = bilinear_warp(&input[0], &first)?;
            masks_prev.push(visibility_mask(&input[j], &warped_prev, alpha)?);
            masks_first.push(visibility_mask(&input[j], &warped_first, alpha)?);
            flows_prev.push(prev);
            flows_first.push(first);
        }
        Ok(Window {
            input,
            processed,
            flows_prev,
            flows_first,
            masks_prev,
            masks_first,
        })
    }
}

/// The three loss components (per-element means) and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_p: f64,
    pub l_st: f64,
    pub l_lt: f64,
    pub total: f64,
}

/// Unrolls the network over one window and backpropagates the combined
/// loss. Returns the loss values and the gradient for every parameter.
pub fn unroll_window(
    net: &TransformNet,
    cfg: &TrainingConfig,
    features: &FeatureStack,
    window: &Window,
) -> Result<(LossBreakdown, BTreeMap<String, ArrayD<f64>>)> {
    let t_count = cfg.unroll;
    let mut tape = Tape::new();
    let bound = BoundNet::bind(&mut tape, net, true);
    let bound_features = features.bind(&mut tape);

    let leaf_frames = |tape: &mut Tape, frames: &[Frame]| -> Vec<_> {
        frames
            .iter()
            .map(|f| tape.leaf(f.clone().into_dyn(), false))
            .collect()
    };
    let vi = leaf_frames(&mut tape, &window.input);
    let vp = leaf_frames(&mut tape, &window.processed);

    // The first output frame is the processed frame passed through, a
    // constant of the graph.
    let mut outputs = vec![vp[0]];
    let mut state = bound.init_state(&mut tape, cfg.crop, cfg.crop);
    for j in 1..t_count {
        let o_prev = if cfg.truncate_temporal_grad {
            let detached = tape.value(outputs[j - 1]).clone();
            tape.leaf(detached, false)
        } else {
            outputs[j - 1]
        };
        let (o_t, next) = bound.step(&mut tape, vi[j], vi[j - 1], vp[j], o_prev, &state);
        outputs.push(o_t);
        state = next;
    }

    let mut lp_sum = tape.constant_scalar(0.0);
    let mut st_sum = tape.constant_scalar(0.0);
    let mut lt_sum = tape.constant_scalar(0.0);
    let mut feature_elems = 0usize;
    for j in 1..t_count {
        let p_term = perceptual_term(&mut tape, &bound_features, outputs[j], vp[j]);
        lp_sum = tape.add(lp_sum, p_term);
        if j == 1 {
            // All frames share the feature geometry; count it once.
            feature_elems = bound_features
                .extract(&mut tape, vp[0])
                .iter()
                .map(|&f| tape.value(f).len())
                .sum();
        }
        let st_term = warp_l1_term(
            &mut tape,
            outputs[j],
            outputs[j - 1],
            &window.flows_prev[j - 1],
            &window.masks_prev[j - 1],
        );
        st_sum = tape.add(st_sum, st_term);
        let lt_term = warp_l1_term(
            &mut tape,
            outputs[j],
            outputs[0],
            &window.flows_first[j - 1],
            &window.masks_first[j - 1],
        );
        lt_sum = tape.add(lt_sum, lt_term);
    }

    let frame_elems = 3 * cfg.crop * cfg.crop;
    let pairs = (t_count - 1) as f64;
    let lp = tape.scale(lp_sum, 1.0 / (pairs * feature_elems as f64));
    let st = tape.scale(st_sum, 1.0 / (pairs * frame_elems as f64));
    let lt = tape.scale(lt_sum, 1.0 / (pairs * frame_elems as f64));
    let wp = tape.scale(lp, cfg.weights.lambda_p);
    let wst = tape.scale(st, cfg.weights.lambda_st);
    let wlt = tape.scale(lt, cfg.weights.lambda_lt);
    let partial = tape.add(wp, wst);
    let total = tape.add(partial, wlt);

    let breakdown = LossBreakdown {
        l_p: tape.scalar(lp),
        l_st: tape.scalar(st),
        l_lt: tape.scalar(lt),
        total: tape.scalar(total),
    };
    let grads = tape.backward(total);
    let mut by_name = BTreeMap::new();
    for (name, id) in bound.iter() {
        let g = grads[id.index()]
            .clone()
            .unwrap_or_else(|| ArrayD::zeros(net.tensors[name].raw_dim()));
        by_name.insert(name.to_string(), g);
    }
    Ok((breakdown, by_name))
}

/// Adaptive-moment optimizer state, checkpointed alongside the parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    m: BTreeMap<String, ArrayD<f64>>,
    v: BTreeMap<String, ArrayD<f64>>,
    steps: usize,
}

impl Adam {
    pub fn new(net: &TransformNet) -> Self {
        let zeros = |t: &ArrayD<f64>| ArrayD::zeros(t.raw_dim());
        Adam {
            m: net.tensors.iter().map(|(n, t)| (n.clone(), zeros(t))).collect(),
            v: net.tensors.iter().map(|(n, t)| (n.clone(), zeros(t))).collect(),
            steps: 0,
        }
    }

    pub fn step(
        &mut self,
        net: &mut TransformNet,
        grads: &BTreeMap<String, ArrayD<f64>>,
        learning_rate: f64,
    ) {
        self.steps += 1;
        let bias1 = 1.0 - ADAM_BETA1.powi(self.steps as i32);
        let bias2 = 1.0 - ADAM_BETA2.powi(self.steps as i32);
        for (name, tensor) in net.tensors.iter_mut() {
            let g = &grads[name];
            let m = self.m.get_mut(name).expect("moment tracked");
            let v = self.v.get_mut(name).expect("moment tracked");
            Zip::from(m.view_mut()).and(g.view()).for_each(|m, &g| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            });
            Zip::from(v.view_mut()).and(g.view()).for_each(|v, &g| {
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            });
            Zip::from(tensor.view_mut())
                .and(m.view())
                .and(v.view())
                .for_each(|t, &m, &v| {
                    *t -= learning_rate * (m / bias1) / ((v / bias2).sqrt() + ADAM_EPS);
                });
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based iteration index.
    pub iteration: usize,
    pub l_p: f64,
    pub l_st: f64,
    pub l_lt: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: TransformNet,
    pub log: Vec<IterationRecord>,
}

/// Filesystem side effects of a training run; all optional so library
/// callers can train purely in memory.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOptions<'a> {
    /// Where checkpoints land (`ckpt_NNNNNN.ckpt`, final `model.ckpt`,
    /// diagnostic `diverged.ckpt`).
    pub checkpoint_dir: Option<&'a Path>,
    /// Resume from this checkpoint (parameters, optimizer state and
    /// iteration counter).
    pub resume: Option<&'a Path>,
    /// Append one JSON record per iteration to this file.
    pub log_path: Option<&'a Path>,
}

fn checkpoint_meta(cfg: &TrainingConfig, iteration: usize, adam_steps: usize) -> serde_json::Value {
    serde_json::json!({
        "params_version": PARAMS_VERSION,
        "config": cfg.network,
        "training": cfg,
        "iteration": iteration,
        "adam_steps": adam_steps,
        "seed": cfg.seed,
    })
}

/// Writes parameters plus optimizer moments in one container.
pub fn save_checkpoint(
    path: &Path,
    net: &TransformNet,
    adam: &Adam,
    cfg: &TrainingConfig,
    iteration: usize,
) -> Result<()> {
    let mut tensors = net.tensors.clone();
    for (name, m) in &adam.m {
        tensors.insert(format!("opt.m.{name}"), m.clone());
    }
    for (name, v) in &adam.v {
        tensors.insert(format!("opt.v.{name}"), v.clone());
    }
    tensor_store::write_tensor_file(path, &checkpoint_meta(cfg, iteration, adam.steps), &tensors)
}

/// Restores a training run: network, optimizer state and the iteration to
/// continue from. Checkpoints without optimizer tensors (e.g. written by
/// [`TransformNet::save`]) resume with fresh moments.
pub fn load_checkpoint(path: &Path) -> Result<(TransformNet, Adam, usize)> {
    let (net, meta) = TransformNet::load(path)?;
    let (_, tensors) = tensor_store::read_tensor_file(path)?;
    let mut adam = Adam::new(&net);
    let mut found = 0;
    for name in net.tensors.keys() {
        if let Some(m) = tensors.get(&format!("opt.m.{name}")) {
            adam.m.insert(name.clone(), m.clone());
            found += 1;
        }
        if let Some(v) = tensors.get(&format!("opt.v.{name}")) {
            adam.v.insert(name.clone(), v.clone());
        }
    }
    if found > 0 {
        adam.steps = meta
            .get("adam_steps")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as usize;
    }
    let iteration = meta
        .get("iteration")
        .and_then(|v| v.as_u64())
        .unwrap_or(0) as usize;
    Ok((net, adam, iteration))
}

/// Trains a model over the dataset. Deterministic for a fixed config in
/// single-threaded execution; see the module docs for the resume contract.
pub fn train(cfg: &TrainingConfig, dataset: &Dataset, opts: &TrainOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    dataset.validate(cfg)?;
    let features = cfg.feature_extractor.load()?;

    let (mut net, mut adam, start) = match opts.resume {
        Some(path) => load_checkpoint(path)?,
        None => {
            let net = TransformNet::init(cfg.network, cfg.seed)?;
            let adam = Adam::new(&net);
            (net, adam, 0)
        }
    };
    if net.config != cfg.network {
        return Err(Error::Config(format!(
            "resumed network {:?} does not match configured {:?}",
            net.config, cfg.network
        )));
    }

    let mut log_file = match opts.log_path {
        Some(path) => Some(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?,
        ),
        None => None,
    };

    let mut log = Vec::new();
    for iteration in start..cfg.iterations {
        // Sampling depends only on seed and iteration index, never on how
        // many times the run was interrupted.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(iteration as u64 + 1);

        let mut sum = LossBreakdown {
            l_p: 0.0,
            l_st: 0.0,
            l_lt: 0.0,
            total: 0.0,
        };
        let mut grad_acc: BTreeMap<String, ArrayD<f64>> = BTreeMap::new();
        for _ in 0..cfg.batch_size {
            let plan = plan_window(&mut rng, dataset, cfg)?;
            let window = Window::from_item(&dataset.items[plan.item], cfg, plan)?;
            let (breakdown, grads) = unroll_window(&net, cfg, &features, &window)?;
            sum.l_p += breakdown.l_p;
            sum.l_st += breakdown.l_st;
            sum.l_lt += breakdown.l_lt;
            sum.total += breakdown.total;
            for (name, g) in grads {
                grad_acc
                    .entry(name)
                    .and_modify(|acc| *acc += &g)
                    .or_insert(g);
            }
        }
        let scale = 1.0 / cfg.batch_size as f64;
        let mean = LossBreakdown {
            l_p: sum.l_p * scale,
            l_st: sum.l_st * scale,
            l_lt: sum.l_lt * scale,
            total: sum.total * scale,
        };
        for g in grad_acc.values_mut() {
            g.mapv_inplace(|v| v * scale);
        }

        // The decomposition must hold for the logged numbers, not just
        // inside the tape.
        let recombined = cfg.weights.lambda_p * mean.l_p
            + cfg.weights.lambda_st * mean.l_st
            + cfg.weights.lambda_lt * mean.l_lt;
        if (recombined - mean.total).abs() > 1e-9 {
            return Err(Error::Contract(format!(
                "loss decomposition drifted: total {} vs recombined {}",
                mean.total, recombined
            )));
        }

        if !mean.total.is_finite() {
            if let Some(dir) = opts.checkpoint_dir {
                save_checkpoint(&dir.join("diverged.ckpt"), &net, &adam, cfg, iteration)?;
            }
            return Err(Error::Diverged {
                iteration,
                context: format!(
                    "loss became non-finite (l_p {}, l_st {}, l_lt {})",
                    mean.l_p, mean.l_st, mean.l_lt
                ),
            });
        }

        adam.step(&mut net, &grad_acc, cfg.learning_rate);

        let record = IterationRecord {
            iteration: iteration + 1,
            l_p: mean.l_p,
            l_st: mean.l_st,
            l_lt: mean.l_lt,
            total: mean.total,
        };
        if let Some(file) = log_file.as_mut() {
            let line = serde_json::to_string(&record).expect("records serialize");
            writeln!(file, "{line}").map_err(|e| Error::io(opts.log_path.unwrap(), e))?;
        }
        log.push(record);

        if let Some(dir) = opts.checkpoint_dir {
            let done = iteration + 1;
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                save_checkpoint(
                    &dir.join(format!("ckpt_{done:06}.ckpt")),
                    &net,
                    &adam,
                    cfg,
                    done,
                )?;
            }
        }
    }

    if let Some(dir) = opts.checkpoint_dir {
        save_checkpoint(&dir.join("model.ckpt"), &net, &adam, cfg, cfg.iterations)?;
    }
    Ok(TrainOutcome { net, log })
}

/// The ratio experiment: retrain with several `(lambda_t, lambda_p)` pairs
/// and measure the stability/fidelity trade-off on an evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// `(lambda_t, lambda_p)` pairs; the temporal weight is applied to both
    /// the short- and long-term terms.
    pub pairs: Vec<(f64, f64)>,
    pub base: TrainingConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.pairs.len() < 2 {
            return Err(Error::Config(format!(
                "a sweep needs at least 2 weight pairs, got {}",
                self.pairs.len()
            )));
        }
        for &(lambda_t, lambda_p) in &self.pairs {
            if !lambda_t.is_finite() || !lambda_p.is_finite() || lambda_t < 0.0 || lambda_p <= 0.0
            {
                return Err(Error::Config(format!(
                    "sweep pair ({lambda_t}, {lambda_p}) needs lambda_t >= 0 and lambda_p > 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda_t: f64,
    pub lambda_p: f64,
    /// Temporal-to-perceptual ratio `lambda_t / lambda_p`.
    pub r: f64,
    /// Mean warping error of the cleaned outputs over the eval set.
    pub e_warp: f64,
    /// Mean perceptual distance of the outputs from the processed frames.
    pub d_perceptual: f64,
}

/// Trains one model per weight pair and evaluates each on the eval set.
/// Rows come back sorted by ratio.
pub fn run_sweep(
    spec: &SweepSpec,
    train_data: &Dataset,
    eval_data: &Dataset,
    metric: &crate::perception::PerceptualMetric,
    opts: &TrainOptions,
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    if eval_data.items.is_empty() {
        return Err(Error::Config("sweep evaluation set is empty".into()));
    }
    let mut rows = Vec::with_capacity(spec.pairs.len());
    for (run, &(lambda_t, lambda_p)) in spec.pairs.iter().enumerate() {
        let mut cfg = spec.base.clone();
        cfg.weights = LossWeights {
            lambda_p,
            lambda_st: lambda_t,
            lambda_lt: lambda_t,
        };
        // Each pair gets its own subdirectory so runs do not overwrite
        // each other's checkpoints or logs.
        let run_paths = match opts.checkpoint_dir {
            Some(dir) => {
                let run_dir = dir.join(format!("run_{run:02}"));
                std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
                let log = run_dir.join("train.log");
                Some((run_dir, log))
            }
            None => None,
        };
        let run_opts = match &run_paths {
            Some((run_dir, log)) => TrainOptions {
                checkpoint_dir: Some(run_dir),
                resume: opts.resume,
                log_path: Some(log),
            },
            None => *opts,
        };
        let outcome = train(&cfg, train_data, &run_opts)?;
        let mut e_warp = 0.0;
        let mut d_perceptual = 0.0;
        for item in &eval_data.items {
            let output = outcome.net.process_video(&item.input, &item.processed)?;
            let report = crate::evaluation::evaluate(&output, &item.processed, &item.flows, metric)?;
            e_warp += report.e_warp;
            d_perceptual += report.d_perceptual;
        }
        let n = eval_data.items.len() as f64;
        rows.push(SweepRow {
            lambda_t,
            lambda_p,
            r: lambda_t / lambda_p,
            e_warp: e_warp / n,
            d_perceptual: d_perceptual / n,
        });
    }
    rows.sort_by(|a, b| a.r.partial_cmp(&b.r).expect("ratios are finite"));
    Ok(rows)
}
