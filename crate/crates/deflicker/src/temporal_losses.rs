//! Temporal training losses: short-term (adjacent frames), long-term
//! (anchor to the first frame) and their weighted combination.
//!
//! Both temporal losses share one shape: warp a reference output onto the
//! current frame's grid and penalize the masked L1 difference. The mask is
//! the soft visibility weight from [`crate::warping::visibility_mask`],
//! computed on the input frames and treated as a constant.
//!
//! The value functions return plain sums as defined; the tape builders
//! produce the same quantity as differentiable nodes. Normalizing sums to
//! per-element means (so weight settings transfer across resolutions) is the
//! trainer's job, not done here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::warp::warp_forward;
use crate::tensor::{Tape, VarId};
use crate::video_data::{FlowField, Frame, FrameSequence, Mask};

/// Weights of the combined loss. What matters empirically is the ratio of
/// temporal weight to perceptual weight: too low keeps flicker, too high
/// over-smooths. The default sits at ratio 10 with the temporal weight
/// split evenly between short- and long-term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_p: f64,
    pub lambda_st: f64,
    pub lambda_lt: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_p: 10.0,
            lambda_st: 100.0,
            lambda_lt: 100.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_p, self.lambda_st, self.lambda_lt];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative, got {self:?}"
            )));
        }
        if all.iter().all(|&l| l == 0.0) {
            return Err(Error::Config("all loss weights are zero".into()));
        }
        Ok(())
    }

    /// Temporal-to-perceptual ratio, defined when the perceptual weight is
    /// positive and the two temporal weights agree.
    pub fn ratio(&self) -> Option<f64> {
        if self.lambda_p > 0.0 && self.lambda_st == self.lambda_lt {
            Some(((self.lambda_st + self.lambda_lt) / 2.0) / self.lambda_p)
        } else {
            None
        }
    }
}

fn check_frames(context: &str, a: &Frame, b: &Frame, flow: &FlowField, mask: &Mask) -> Result<()> {
    let (_, h, w) = a.dim();
    if b.dim() != a.dim() || flow.dims() != (h, w) || mask.dim() != (h, w) {
        return Err(Error::DimensionMismatch {
            context: context.into(),
            expected: format!("{:?}", a.dim()),
            actual: format!(
                "frame {:?}, flow {:?}, mask {:?}",
                b.dim(),
                flow.dims(),
                mask.dim()
            ),
        });
    }
    Ok(())
}

/// Masked warping error between the current output and a warped reference
/// output: `sum_i mask_i * |o_t_i - warp(o_reference, flow)_i|`.
pub fn short_term_loss(
    o_t: &Frame,
    o_prev: &Frame,
    flow: &FlowField,
    mask: &Mask,
) -> Result<f64> {
    check_frames("short_term_loss", o_t, o_prev, flow, mask)?;
    let warped = warp_forward(&o_prev.view(), &flow.to_tensor().view());
    let mut acc = 0.0;
    let (c, h, w) = o_t.dim();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                acc += mask[[y, x]] * (o_t[[ch, y, x]] - warped[[ch, y, x]]).abs();
            }
        }
    }
    Ok(acc)
}

/// Anchored warping error: the first output frame warped onto every later
/// frame's grid, `sum_{t=2..=T} sum_i mask_i * |o_t_i - warp(o_1, flow_t)_i|`.
///
/// `flows_to_first[i]` and `masks[i]` belong to frame `t = i + 2`.
pub fn long_term_loss(
    o_seq: &FrameSequence,
    flows_to_first: &[FlowField],
    masks: &[Mask],
) -> Result<f64> {
    let t_count = o_seq.len();
    if t_count < 2 {
        return Err(Error::SequenceTooShort {
            needed: 2,
            got: t_count,
        });
    }
    if flows_to_first.len() != t_count - 1 || masks.len() != t_count - 1 {
        return Err(Error::DimensionMismatch {
            context: "long_term_loss lists".into(),
            expected: format!("{} flows and masks", t_count - 1),
            actual: format!("{} flows, {} masks", flows_to_first.len(), masks.len()),
        });
    }
    let mut acc = 0.0;
    for t in 2..=t_count {
        acc += short_term_loss(
            o_seq.frame(t),
            o_seq.frame(1),
            &flows_to_first[t - 2],
            &masks[t - 2],
        )?;
    }
    Ok(acc)
}

/// Weighted combination of the three loss components.
pub fn total_loss(l_p: f64, l_st: f64, l_lt: f64, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    if l_p < 0.0 || l_st < 0.0 || l_lt < 0.0 {
        return Err(Error::Contract(format!(
            "loss components must be non-negative, got ({l_p}, {l_st}, {l_lt})"
        )));
    }
    Ok(w.lambda_p * l_p + w.lambda_st * l_st + w.lambda_lt * l_lt)
}

// ----------------------------------------------------------------------
// Tape builders used by the trainer
// ----------------------------------------------------------------------

/// Tape node for `sum(mask * |a - b|)` with the mask as a constant weight.
pub fn masked_l1_term(tape: &mut Tape, a: VarId, b: VarId, mask: &Mask) -> VarId {
    let m = tape.leaf(mask.clone().into_dyn(), false);
    let diff = tape.sub(a, b);
    let l1 = tape.abs(diff);
    let weighted = tape.mul_bcast_c(l1, m);
    tape.sum_all(weighted)
}

/// Tape node for the warping error of `o_t` against `o_reference` warped by
/// `flow`. Gradients flow into both frames unless the caller detached
/// `o_reference`.
pub fn warp_l1_term(
    tape: &mut Tape,
    o_t: VarId,
    o_reference: VarId,
    flow: &FlowField,
    mask: &Mask,
) -> VarId {
    let f = tape.leaf(flow.to_tensor().into_dyn(), false);
    let warped = tape.warp(o_reference, f);
    masked_l1_term(tape, o_t, warped, mask)
}
