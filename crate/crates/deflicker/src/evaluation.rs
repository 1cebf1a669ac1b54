//! Quantitative metrics: temporal warping error and perceptual distance,
//! bundled into serializable reports.
//!
//! The warping error measures residual flicker: align each frame with its
//! successor using optical flow, mask away pixels with no valid
//! correspondence, and average the squared difference. The perceptual
//! distance measures how far the cleaned video drifted from the processed
//! one, in the feature space of [`crate::perception::PerceptualMetric`].
//! Good outputs score low on both; the loss-weight ratio trades one against
//! the other.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowProvider;
use crate::perception::PerceptualMetric;
use crate::tensor::warp::warp_forward;
use crate::video_data::{FlowField, Frame, FrameSequence, Mask};

/// Warping error of one frame pair `(t, t+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairError {
    /// Index of the earlier frame (1-based).
    pub t: usize,
    pub error: f64,
    /// True when every pixel was occluded; the error is reported as 0 then
    /// and must not be read as "perfectly stable".
    pub degenerate: bool,
}

/// Everything a metrics run produces, with enough metadata to tell numbers
/// from different configurations apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sequence_id: String,
    pub flow_backend: String,
    pub metric_id: String,
    /// Hash of the run configuration, stamped by the command layer; empty
    /// for library-level calls.
    pub config_hash: String,
    pub seed: u64,
    pub pair_errors: Vec<PairError>,
    pub e_warp: f64,
    pub d_perceptual: f64,
}

fn check_same_dims(context: &str, a: &Frame, b: &Frame) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: context.into(),
            expected: format!("{:?}", a.dim()),
            actual: format!("{:?}", b.dim()),
        });
    }
    Ok(())
}

/// Occlusion-masked mean squared warping error between a frame and its
/// flow-aligned successor.
///
/// Per valid pixel the squared channel difference is summed, then averaged
/// over the valid pixels only. An all-occluded pair has no defined value;
/// it returns `(0.0, true)` so callers can surface the degeneracy.
pub fn warp_error_pair(
    v_t: &Frame,
    v_next: &Frame,
    flow: &FlowField,
    occlusion: &Mask,
) -> Result<(f64, bool)> {
    check_same_dims("warp_error_pair frames", v_t, v_next)?;
    let (c, h, w) = v_t.dim();
    if flow.dims() != (h, w) || occlusion.dim() != (h, w) {
        return Err(Error::DimensionMismatch {
            context: "warp_error_pair flow/occlusion".into(),
            expected: format!("{h}x{w}"),
            actual: format!("{:?} / {:?}", flow.dims(), occlusion.dim()),
        });
    }
    if occlusion.iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::Contract(
            "occlusion mask must be binary".into(),
        ));
    }
    let warped = warp_forward(&v_next.view(), &flow.to_tensor().view());
    let valid: f64 = occlusion.sum();
    if valid == 0.0 {
        return Ok((0.0, true));
    }
    let mut acc = 0.0;
    for y in 0..h {
        for x in 0..w {
            if occlusion[[y, x]] == 0.0 {
                continue;
            }
            for ch in 0..c {
                let d = v_t[[ch, y, x]] - warped[[ch, y, x]];
                acc += d * d;
            }
        }
    }
    Ok((acc / valid, false))
}

/// Mean warping error over all consecutive pairs of a sequence, with the
/// per-pair breakdown. Degenerate (fully occluded) pairs contribute 0 to
/// the mean and carry their flag in the list.
pub fn warp_error_video(
    video: &FrameSequence,
    provider: &FlowProvider,
) -> Result<(f64, Vec<PairError>)> {
    warp_error_video_with(video, provider, crate::flow::OcclusionThresholds::default())
}

/// [`warp_error_video`] with explicit occlusion-consistency thresholds.
pub fn warp_error_video_with(
    video: &FrameSequence,
    provider: &FlowProvider,
    thresholds: crate::flow::OcclusionThresholds,
) -> Result<(f64, Vec<PairError>)> {
    if video.len() < 2 {
        return Err(Error::SequenceTooShort {
            needed: 2,
            got: video.len(),
        });
    }
    let mut pairs = Vec::with_capacity(video.len() - 1);
    let mut acc = 0.0;
    for t in 1..video.len() {
        let flow = provider.flow(video, t, t + 1)?;
        let occlusion = provider.occlusion(video, t, t + 1, thresholds)?;
        let (error, degenerate) =
            warp_error_pair(video.frame(t), video.frame(t + 1), &flow, &occlusion)?;
        acc += error;
        pairs.push(PairError {
            t,
            error,
            degenerate,
        });
    }
    Ok((acc / pairs.len() as f64, pairs))
}

/// Scores an output video: temporal stability of `output` plus its
/// perceptual drift from `processed` (first frame excluded, it is passed
/// through verbatim).
pub fn evaluate(
    output: &FrameSequence,
    processed: &FrameSequence,
    provider: &FlowProvider,
    metric: &PerceptualMetric,
) -> Result<MetricsReport> {
    evaluate_with(
        output,
        processed,
        provider,
        metric,
        crate::flow::OcclusionThresholds::default(),
    )
}

/// [`evaluate`] with explicit occlusion-consistency thresholds.
pub fn evaluate_with(
    output: &FrameSequence,
    processed: &FrameSequence,
    provider: &FlowProvider,
    metric: &PerceptualMetric,
    thresholds: crate::flow::OcclusionThresholds,
) -> Result<MetricsReport> {
    if output.len() != processed.len()
        || output.frame(1).dim() != processed.frame(1).dim()
    {
        return Err(Error::DimensionMismatch {
            context: "evaluate sequences".into(),
            expected: format!("{} frames of {:?}", output.len(), output.frame(1).dim()),
            actual: format!(
                "{} frames of {:?}",
                processed.len(),
                processed.frame(1).dim()
            ),
        });
    }
    let (e_warp, pair_errors) = warp_error_video_with(output, provider, thresholds)?;
    let d_perceptual = metric.sequence_distance(processed, output)?;
    Ok(MetricsReport {
        sequence_id: String::new(),
        flow_backend: provider.id().into(),
        metric_id: metric.id().into(),
        config_hash: String::new(),
        seed: 0,
        pair_errors,
        e_warp,
        d_perceptual,
    })
}

/// Writes a report as `<stem>.txt` (human-readable) plus `<stem>.json`
/// (machine-readable, loads back via [`load_report`]). Floats are printed
/// with full round-trip precision in both.
pub fn save_report(report: &MetricsReport, stem: &Path) -> Result<()> {
    let txt_path = stem.with_extension("txt");
    let json_path = stem.with_extension("json");
    let mut text = String::new();
    text.push_str(&format!("sequence:     {}\n", report.sequence_id));
    text.push_str(&format!("flow backend: {}\n", report.flow_backend));
    text.push_str(&format!("metric:       {}\n", report.metric_id));
    text.push_str(&format!("config hash:  {}\n", report.config_hash));
    text.push_str(&format!("seed:         {}\n", report.seed));
    text.push_str(&format!("E_warp:       {:?}\n", report.e_warp));
    text.push_str(&format!("D_perceptual: {:?}\n", report.d_perceptual));
    text.push_str("pair errors:\n");
    for pair in &report.pair_errors {
        let flag = if pair.degenerate {
            "  (all pixels occluded)"
        } else {
            ""
        };
        text.push_str(&format!(
            "  ({}, {}): {:?}{}\n",
            pair.t,
            pair.t + 1,
            pair.error,
            flag
        ));
    }
    std::fs::write(&txt_path, text).map_err(|e| Error::io(&txt_path, e))?;
    let json = serde_json::to_string_pretty(report)
        .expect("reports always serialize");
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}

/// Reads the JSON companion written by [`save_report`].
pub fn load_report(stem: &Path) -> Result<MetricsReport> {
    let json_path: PathBuf = stem.with_extension("json");
    let raw = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    serde_json::from_str(&raw)
        .map_err(|e| Error::Contract(format!("malformed report {}: {e}", json_path.display())))
}
