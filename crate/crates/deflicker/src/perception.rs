//! Feature extraction for the content loss and the perceptual-distance
//! metric.
//!
//! Both the training loss and the evaluation metric compare frames in a
//! feature space instead of raw pixels. Three extractors share one
//! interface:
//!
//! - `Identity`: features are the pixels themselves. The fully analyzable
//!   baseline used by most oracle tests.
//! - `FixedRandom`: three stride-2 convolutions with ReLU, weights drawn
//!   once from a seeded generator. Deterministic, no external files, and the
//!   default for tests and acceptance runs.
//! - `Pretrained`: an 11-layer classifier-style stack (three stride-2
//!   stages) read from a weight file, tapped at its 4th block by default.
//!   When the weight file is missing, loading fails with an error that
//!   points at the fixed-random fallback.
//!
//! The distance metric is a deep-feature MSE on channel-unit-normalized
//! features. It is deliberately uncalibrated: scores order methods on one
//! fixture but are not comparable to published perceptual scores.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::{Array1, Array3, Array4, ArrayD};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv::conv2d_forward, Tape, VarId};
use crate::tensor_store;
use crate::video_data::{Frame, FrameSequence};

/// Guard against division by zero when unit-normalizing feature vectors.
pub const FEATURE_NORM_EPS: f64 = 1e-10;

/// Channel widths of the pretrained-style stack, one entry per conv layer.
pub const PRETRAINED_CHANNELS: [usize; 11] = [16, 16, 32, 32, 64, 64, 64, 64, 128, 128, 128];
/// Strides of the pretrained-style stack; three stride-2 stages give an
/// 8x downsampled map at the default tap.
pub const PRETRAINED_STRIDES: [usize; 11] = [1, 1, 2, 1, 2, 1, 1, 1, 2, 1, 1];
/// Default tap: the last layer of the 4th block.
pub const PRETRAINED_DEFAULT_TAP: usize = 11;

const FIXED_RANDOM_CHANNELS: [usize; 3] = [8, 16, 16];

/// Which feature extractor to use. See the module docs for the trade-offs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureExtractor {
    Identity,
    FixedRandom { seed: u64 },
    Pretrained {
        weights: PathBuf,
        /// 1-based conv layers whose activations are compared; losses and
        /// distances sum or average over this list.
        tap_layers: Vec<usize>,
    },
}

impl FeatureExtractor {
    /// Short stable name stamped into reports so numbers from different
    /// feature spaces are never compared by accident.
    pub fn id(&self) -> String {
        match self {
            FeatureExtractor::Identity => "identity".into(),
            FeatureExtractor::FixedRandom { seed } => format!("fixed-random-{seed}"),
            FeatureExtractor::Pretrained { tap_layers, .. } => {
                let taps: Vec<String> = tap_layers.iter().map(|t| t.to_string()).collect();
                format!("pretrained-tap{}", taps.join("."))
            }
        }
    }

    /// Materializes the weights. The only fallible step is reading the
    /// pretrained weight file.
    pub fn load(&self) -> Result<FeatureStack> {
        match self {
            FeatureExtractor::Identity => Ok(FeatureStack {
                layers: Vec::new(),
                taps: Vec::new(),
            }),
            FeatureExtractor::FixedRandom { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut layers = Vec::new();
                let mut cin = 3;
                for &cout in FIXED_RANDOM_CHANNELS.iter() {
                    layers.push(ConvLayer::he_uniform(&mut rng, cin, cout, 2));
                    cin = cout;
                }
                Ok(FeatureStack {
                    layers,
                    taps: vec![FIXED_RANDOM_CHANNELS.len()],
                })
            }
            FeatureExtractor::Pretrained { weights, tap_layers } => {
                if tap_layers.is_empty()
                    || tap_layers.iter().any(|&t| t == 0 || t > PRETRAINED_CHANNELS.len())
                {
                    return Err(Error::Config(format!(
                        "tap layers must be within 1..={}, got {tap_layers:?}",
                        PRETRAINED_CHANNELS.len()
                    )));
                }
                if !weights.exists() {
                    return Err(Error::PretrainedWeightsUnavailable {
                        path: weights.clone(),
                    });
                }
                let (_, tensors) = tensor_store::read_tensor_file(weights)?;
                let mut layers = Vec::new();
                let mut cin = 3;
                for (i, (&cout, &stride)) in PRETRAINED_CHANNELS
                    .iter()
                    .zip(PRETRAINED_STRIDES.iter())
                    .enumerate()
                {
                    let w = fetch(&tensors, &format!("conv{}.w", i + 1), &[cout, cin, 3, 3])?;
                    let b = fetch(&tensors, &format!("conv{}.b", i + 1), &[cout])?;
                    layers.push(ConvLayer {
                        weight: w.into_dimensionality().unwrap(),
                        bias: b.into_dimensionality().unwrap(),
                        stride,
                    });
                    cin = cout;
                }
                Ok(FeatureStack {
                    layers,
                    taps: tap_layers.clone(),
                })
            }
        }
    }
}

fn fetch(
    tensors: &BTreeMap<String, ArrayD<f64>>,
    name: &str,
    shape: &[usize],
) -> Result<ArrayD<f64>> {
    let t = tensors
        .get(name)
        .ok_or_else(|| Error::MissingParameter { name: name.into() })?;
    if t.shape() != shape {
        return Err(Error::DimensionMismatch {
            context: format!("feature weight {name}"),
            expected: format!("{shape:?}"),
            actual: format!("{:?}", t.shape()),
        });
    }
    Ok(t.clone())
}

/// The declared topology filled with seeded random weights, in the layout
/// [`FeatureExtractor::Pretrained`] reads. Useful when no converted
/// classifier weights exist but the pretrained code path must run.
pub fn random_pretrained_tensors(seed: u64) -> BTreeMap<String, ArrayD<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = BTreeMap::new();
    let mut cin = 3;
    for (i, &cout) in PRETRAINED_CHANNELS.iter().enumerate() {
        let layer = ConvLayer::he_uniform(&mut rng, cin, cout, 1);
        map.insert(format!("conv{}.w", i + 1), layer.weight.into_dyn());
        map.insert(format!("conv{}.b", i + 1), layer.bias.into_dyn());
        cin = cout;
    }
    map
}

#[derive(Debug, Clone)]
struct ConvLayer {
    weight: Array4<f64>,
    bias: Array1<f64>,
    stride: usize,
}

impl ConvLayer {
    fn he_uniform(rng: &mut ChaCha8Rng, cin: usize, cout: usize, stride: usize) -> Self {
        let fan_in = (cin * 9) as f64;
        let limit = (6.0 / fan_in).sqrt();
        let weight = Array4::from_shape_simple_fn((cout, cin, 3, 3), || {
            rng.random_range(-limit..limit)
        });
        // Nonzero biases matter: without them the stack is positively
        // homogeneous and unit normalization would cancel any global gain,
        // leaving brightness changes invisible to the metric.
        let bias = Array1::from_shape_simple_fn(cout, || rng.random_range(-limit..limit));
        ConvLayer {
            weight,
            bias,
            stride,
        }
    }
}

/// Materialized extractor weights. An empty layer list is the identity.
#[derive(Debug, Clone)]
pub struct FeatureStack {
    layers: Vec<ConvLayer>,
    taps: Vec<usize>,
}

impl FeatureStack {
    /// Deterministic feature maps for one frame, one per tap layer.
    pub fn extract(&self, frame: &Frame) -> Vec<Array3<f64>> {
        if self.layers.is_empty() {
            return vec![frame.clone()];
        }
        let mut outputs = Vec::new();
        let mut x = frame.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = conv2d_forward(
                &x.view(),
                &layer.weight.view(),
                &layer.bias.view(),
                layer.stride,
                1,
            );
            y.mapv_inplace(|v| v.max(0.0));
            if self.taps.contains(&(i + 1)) {
                outputs.push(y.clone());
            }
            if i + 1 >= self.max_tap() {
                break;
            }
            x = y;
        }
        outputs
    }

    /// Pushes the weights onto a tape once, so multiple frames on the same
    /// tape share them.
    pub fn bind(&self, tape: &mut Tape) -> BoundFeatures {
        let layers = self
            .layers
            .iter()
            .map(|l| BoundLayer {
                weight: tape.leaf(l.weight.clone().into_dyn(), false),
                bias: tape.leaf(l.bias.clone().into_dyn(), false),
                stride: l.stride,
            })
            .collect();
        BoundFeatures {
            layers,
            taps: self.taps.clone(),
        }
    }

    fn max_tap(&self) -> usize {
        self.taps.iter().copied().max().unwrap_or(0)
    }
}

struct BoundLayer {
    weight: VarId,
    bias: VarId,
    stride: usize,
}

/// A [`FeatureStack`] whose weights live on a tape, for differentiable
/// extraction.
pub struct BoundFeatures {
    layers: Vec<BoundLayer>,
    taps: Vec<usize>,
}

impl BoundFeatures {
    /// Differentiable feature maps of the tape node `x`, one per tap.
    pub fn extract(&self, tape: &mut Tape, x: VarId) -> Vec<VarId> {
        if self.layers.is_empty() {
            return vec![x];
        }
        let mut outputs = Vec::new();
        let max_tap = self.taps.iter().copied().max().unwrap_or(0);
        let mut cur = x;
        for (i, layer) in self.layers.iter().enumerate().take(max_tap) {
            let conv = tape.conv2d(cur, layer.weight, layer.bias, layer.stride, 1);
            cur = tape.relu(conv);
            if self.taps.contains(&(i + 1)) {
                outputs.push(cur);
            }
        }
        outputs
    }
}

/// Tape node for the feature L1 between two frames: the sum over tap layers
/// and feature elements of `|phi(o) - phi(p)|`.
pub fn perceptual_term(tape: &mut Tape, features: &BoundFeatures, o: VarId, p: VarId) -> VarId {
    let fo = features.extract(tape, o);
    let fp = features.extract(tape, p);
    let mut total = tape.constant_scalar(0.0);
    for (a, b) in fo.into_iter().zip(fp) {
        let diff = tape.sub(a, b);
        let l1 = tape.abs(diff);
        let s = tape.sum_all(l1);
        total = tape.add(total, s);
    }
    total
}

/// Content loss over a sequence pair: feature L1 summed over frames 2..=T.
///
/// The first frame is excluded because the transformation passes it through
/// unchanged; including it would add a constant.
pub fn perceptual_loss(
    output: &FrameSequence,
    processed: &FrameSequence,
    stack: &FeatureStack,
) -> Result<f64> {
    check_pair(output, processed)?;
    let mut total = 0.0;
    for t in 2..=output.len() {
        let fo = stack.extract(output.frame(t));
        let fp = stack.extract(processed.frame(t));
        for (a, b) in fo.iter().zip(fp.iter()) {
            total += (a - b).mapv(f64::abs).sum();
        }
    }
    Ok(total)
}

fn check_pair(a: &FrameSequence, b: &FrameSequence) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "sequence pair".into(),
            expected: format!("{} frames", a.len()),
            actual: format!("{} frames", b.len()),
        });
    }
    if a.frame(1).dim() != b.frame(1).dim() {
        return Err(Error::DimensionMismatch {
            context: "sequence pair".into(),
            expected: format!("{:?}", a.frame(1).dim()),
            actual: format!("{:?}", b.frame(1).dim()),
        });
    }
    Ok(())
}

/// Unit-normalizes each spatial position's channel vector.
fn unit_normalize(features: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = features.dim();
    let mut out = features.clone();
    for y in 0..h {
        for x in 0..w {
            let norm = (0..c)
                .map(|ch| features[[ch, y, x]].powi(2))
                .sum::<f64>()
                .sqrt();
            for ch in 0..c {
                out[[ch, y, x]] /= norm + FEATURE_NORM_EPS;
            }
        }
    }
    out
}

/// Deep-feature distance: MSE between channel-unit-normalized features,
/// averaged over tap layers.
///
/// This is an uncalibrated surrogate for learned perceptual metrics: it
/// ranks outputs on a shared fixture but its absolute values carry no
/// cross-dataset meaning.
#[derive(Debug, Clone)]
pub struct PerceptualMetric {
    stack: FeatureStack,
    id: String,
}

impl PerceptualMetric {
    pub fn new(extractor: &FeatureExtractor) -> Result<Self> {
        Ok(PerceptualMetric {
            stack: extractor.load()?,
            id: extractor.id(),
        })
    }

    pub fn from_stack(stack: FeatureStack) -> Self {
        PerceptualMetric {
            stack,
            id: "custom".into(),
        }
    }

    /// Name of the feature space behind this metric.
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Distance between two frames: non-negative, zero for identical input.
    pub fn frame_distance(&self, a: &Frame, b: &Frame) -> f64 {
        let fa = self.stack.extract(a);
        let fb = self.stack.extract(b);
        let mut acc = 0.0;
        for (x, y) in fa.iter().zip(fb.iter()) {
            let (nx, ny) = (unit_normalize(x), unit_normalize(y));
            let diff = &nx - &ny;
            acc += diff.mapv(|d| d * d).mean().unwrap_or(0.0);
        }
        acc / fa.len() as f64
    }

    /// Mean frame distance over t = 2..=T; the first frame is excluded
    /// because every method copies it verbatim.
    pub fn sequence_distance(
        &self,
        processed: &FrameSequence,
        output: &FrameSequence,
    ) -> Result<f64> {
        check_pair(processed, output)?;
        if processed.len() < 2 {
            return Err(Error::SequenceTooShort {
                needed: 2,
                got: processed.len(),
            });
        }
        let t_count = processed.len();
        let mut acc = 0.0;
        for t in 2..=t_count {
            acc += self.frame_distance(output.frame(t), processed.frame(t));
        }
        Ok(acc / (t_count - 1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check::{fd_gradient, max_rel_err};
    use crate::video_data::BitDepth;
    use ndarray::Array3;

    fn frame_fn(seed: usize) -> Frame {
        Array3::from_shape_fn((3, 8, 8), |(c, y, x)| {
            (((c * 31 + y * 7 + x * 3 + seed * 13) % 17) as f64) / 17.0
        })
    }

    fn seq(frames: Vec<Frame>) -> FrameSequence {
        FrameSequence::new(frames, BitDepth::Eight).unwrap()
    }

    #[test]
    fn identity_extractor_returns_the_pixels() {
        let stack = FeatureExtractor::Identity.load().unwrap();
        let frame = frame_fn(0);
        let feats = stack.extract(&frame);
        assert_eq!(feats.len(), 1);
        assert_eq!(feats[0], frame);
    }

    #[test]
    fn fixed_random_extractor_is_deterministic() {
        let a = FeatureExtractor::FixedRandom { seed: 4 }.load().unwrap();
        let b = FeatureExtractor::FixedRandom { seed: 4 }.load().unwrap();
        let frame = frame_fn(1);
        assert_eq!(a.extract(&frame), b.extract(&frame));
        let c = FeatureExtractor::FixedRandom { seed: 5 }.load().unwrap();
        assert_ne!(a.extract(&frame), c.extract(&frame));
    }

    #[test]
    fn fixed_random_downsamples_8x_via_three_stride_2_stages() {
        let stack = FeatureExtractor::FixedRandom { seed: 0 }.load().unwrap();
        let frame = Array3::zeros((3, 64, 64));
        let feats = stack.extract(&frame);
        assert_eq!(feats[0].dim(), (16, 8, 8));
    }

    #[test]
    fn pretrained_extractor_loads_from_a_container_and_downsamples_8x() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.dfts");
        tensor_store::write_tensor_file(
            &path,
            &serde_json::json!({"seed": 3}),
            &random_pretrained_tensors(3),
        )
        .unwrap();
        let fe = FeatureExtractor::Pretrained {
            weights: path,
            tap_layers: vec![PRETRAINED_DEFAULT_TAP],
        };
        let stack = fe.load().unwrap();
        let frame = Array3::from_elem((3, 64, 64), 0.5);
        let feats = stack.extract(&frame);
        assert_eq!(feats.len(), 1);
        assert_eq!(feats[0].dim(), (128, 8, 8));
    }

    #[test]
    fn missing_pretrained_weights_point_at_the_fallback() {
        let fe = FeatureExtractor::Pretrained {
            weights: PathBuf::from("/nonexistent/weights.dfts"),
            tap_layers: vec![11],
        };
        let err = fe.load().unwrap_err();
        assert!(matches!(err, Error::PretrainedWeightsUnavailable { .. }));
        assert!(err.to_string().contains("fixed-random"));
    }

    #[test]
    fn multi_tap_extraction_returns_one_map_per_tap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.dfts");
        tensor_store::write_tensor_file(
            &path,
            &serde_json::json!({}),
            &random_pretrained_tensors(9),
        )
        .unwrap();
        let fe = FeatureExtractor::Pretrained {
            weights: path,
            tap_layers: vec![2, 5, 11],
        };
        let stack = fe.load().unwrap();
        let feats = stack.extract(&Array3::from_elem((3, 32, 32), 0.25));
        assert_eq!(feats.len(), 3);
        assert_eq!(feats[0].dim(), (16, 32, 32));
        assert_eq!(feats[1].dim(), (64, 8, 8));
        assert_eq!(feats[2].dim(), (128, 4, 4));
    }

    #[test]
    fn perceptual_loss_is_zero_for_identical_sequences_and_skips_frame_1() {
        let stack = FeatureExtractor::FixedRandom { seed: 1 }.load().unwrap();
        let a = seq(vec![frame_fn(0), frame_fn(1), frame_fn(2)]);
        assert_eq!(perceptual_loss(&a, &a.clone(), &stack).unwrap(), 0.0);

        // Differ only in the first frame: still zero.
        let b = seq(vec![frame_fn(9), frame_fn(1), frame_fn(2)]);
        assert_eq!(perceptual_loss(&a, &b, &stack).unwrap(), 0.0);
    }

    #[test]
    fn perceptual_loss_matches_a_hand_evaluated_pixel_case() {
        // Identity features, T=2, one differing pixel with channel
        // differences (0.1, 0.2, -0.1): L1 sums to 0.4.
        let stack = FeatureExtractor::Identity.load().unwrap();
        let base = Array3::from_elem((3, 1, 1), 0.3);
        let mut changed = base.clone();
        changed[[0, 0, 0]] += 0.1;
        changed[[1, 0, 0]] += 0.2;
        changed[[2, 0, 0]] -= 0.1;
        let o = seq(vec![base.clone(), changed]);
        let p = seq(vec![base.clone(), base.clone()]);
        let loss = perceptual_loss(&o, &p, &stack).unwrap();
        assert!((loss - 0.4).abs() < 1e-12);
        // Symmetry of L1.
        let swapped = perceptual_loss(&p, &o, &stack).unwrap();
        assert_eq!(loss, swapped);
    }

    #[test]
    fn perceptual_loss_rejects_mismatched_sequences() {
        let stack = FeatureExtractor::Identity.load().unwrap();
        let a = seq(vec![frame_fn(0), frame_fn(1)]);
        let b = seq(vec![frame_fn(0)]);
        assert!(perceptual_loss(&a, &b, &stack).is_err());
    }

    #[test]
    fn identity_loss_is_invariant_to_a_shared_constant_shift() {
        let stack = FeatureExtractor::Identity.load().unwrap();
        let a = seq(vec![frame_fn(0), frame_fn(1)]);
        let b = seq(vec![frame_fn(2), frame_fn(3)]);
        let l1 = perceptual_loss(&a, &b, &stack).unwrap();
        let shift = |s: &FrameSequence| {
            seq(s.frames().iter().map(|f| f + 0.07).collect())
        };
        let l2 = perceptual_loss(&shift(&a), &shift(&b), &stack).unwrap();
        assert!((l1 - l2).abs() < 1e-9);
    }

    #[test]
    fn tape_term_matches_the_value_form() {
        let stack = FeatureExtractor::FixedRandom { seed: 6 }.load().unwrap();
        let o = seq(vec![frame_fn(0), frame_fn(1)]);
        let p = seq(vec![frame_fn(0), frame_fn(4)]);
        let value = perceptual_loss(&o, &p, &stack).unwrap();

        let mut tape = Tape::new();
        let bound = stack.bind(&mut tape);
        let ov = tape.leaf(o.frame(2).clone().into_dyn(), false);
        let pv = tape.leaf(p.frame(2).clone().into_dyn(), false);
        let term = perceptual_term(&mut tape, &bound, ov, pv);
        assert!((tape.scalar(term) - value).abs() < 1e-12);
    }

    #[test]
    fn perceptual_loss_gradient_matches_finite_differences() {
        for fe in [
            FeatureExtractor::Identity,
            FeatureExtractor::FixedRandom { seed: 2 },
        ] {
            let stack = fe.load().unwrap();
            let o2 = frame_fn(3);
            let p2 = frame_fn(5);
            let mut tape = Tape::new();
            let bound = stack.bind(&mut tape);
            let ov = tape.leaf(o2.clone().into_dyn(), true);
            let pv = tape.leaf(p2.clone().into_dyn(), false);
            let term = perceptual_term(&mut tape, &bound, ov, pv);
            let grads = tape.backward(term);
            let analytic = grads
                .iter()
                .flatten()
                .next()
                .expect("gradient for the output frame");

            let numeric = fd_gradient(
                |x| {
                    let mut t = Tape::new();
                    let b = stack.bind(&mut t);
                    let o = t.leaf(x.clone(), true);
                    let p = t.leaf(p2.clone().into_dyn(), false);
                    let term = perceptual_term(&mut t, &b, o, p);
                    t.scalar(term)
                },
                &o2.clone().into_dyn(),
                1e-6,
            );
            let err = max_rel_err(analytic, &numeric);
            assert!(err < 1e-4, "{fe:?}: rel err {err}");
        }
    }

    #[test]
    fn metric_is_zero_for_identical_frames_and_positive_otherwise() {
        let metric = PerceptualMetric::new(&FeatureExtractor::FixedRandom { seed: 8 }).unwrap();
        let a = frame_fn(0);
        assert_eq!(metric.frame_distance(&a, &a.clone()), 0.0);
        let b = frame_fn(1);
        assert!(metric.frame_distance(&a, &b) > 0.0);
    }

    #[test]
    fn metric_excludes_the_first_frame() {
        let metric = PerceptualMetric::new(&FeatureExtractor::Identity).unwrap();
        let p = seq(vec![frame_fn(0), frame_fn(1)]);
        let o = seq(vec![frame_fn(7), frame_fn(1)]);
        assert_eq!(metric.sequence_distance(&p, &o).unwrap(), 0.0);
    }

    #[test]
    fn metric_matches_an_independent_hand_computation() {
        // Identity features on a 2x2 fixture, one frame offset by +0.1.
        let base = Array3::from_shape_fn((3, 2, 2), |(c, y, x)| {
            0.2 + 0.1 * c as f64 + 0.05 * (y * 2 + x) as f64
        });
        let shifted = &base + 0.1;
        let metric = PerceptualMetric::new(&FeatureExtractor::Identity).unwrap();
        let got = metric.frame_distance(&base, &shifted);

        // Oracle: normalize each pixel's RGB vector independently, then MSE.
        let mut expect = 0.0;
        for y in 0..2 {
            for x in 0..2 {
                let va: Vec<f64> = (0..3).map(|c| base[[c, y, x]]).collect();
                let vb: Vec<f64> = (0..3).map(|c| shifted[[c, y, x]]).collect();
                let na = va.iter().map(|v| v * v).sum::<f64>().sqrt() + FEATURE_NORM_EPS;
                let nb = vb.iter().map(|v| v * v).sum::<f64>().sqrt() + FEATURE_NORM_EPS;
                for c in 0..3 {
                    expect += (va[c] / na - vb[c] / nb).powi(2);
                }
            }
        }
        expect /= 12.0;
        assert!((got - expect).abs() < 1e-12, "got {got}, expect {expect}");
    }

    #[test]
    fn sequence_distance_averages_over_t_ge_2() {
        let metric = PerceptualMetric::new(&FeatureExtractor::Identity).unwrap();
        let p = seq(vec![frame_fn(0), frame_fn(1), frame_fn(2)]);
        let o = seq(vec![frame_fn(0), frame_fn(3), frame_fn(4)]);
        let d = metric.sequence_distance(&p, &o).unwrap();
        let d2 = metric.frame_distance(o.frame(2), p.frame(2));
        let d3 = metric.frame_distance(o.frame(3), p.frame(3));
        assert!((d - (d2 + d3) / 2.0).abs() < 1e-15);
    }
}
