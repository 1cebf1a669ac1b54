//! Backward warping of frames and the visibility mask for temporal losses.
//!
//! `bilinear_warp(frame, flow)` samples `frame` at `x + flow(x)`, so warping
//! frame `b` by the flow that points from `a` to `b` aligns `b`'s content
//! with `a`'s pixel grid. The visibility mask turns the per-pixel warping
//! error between two aligned frames into a soft weight: pixels where warping
//! failed (occlusions, flow errors) get exponentially small weight.

use crate::error::{Error, Result};
use crate::tensor::warp::warp_forward;
use crate::video_data::{FlowField, Frame, Mask};

/// Sharpness of the visibility mask.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WarpConfig {
    /// Decay rate of the mask: `M = exp(-alpha * squared RGB difference)`.
    /// Assumes pixel values in `[0, 1]`.
    pub alpha: f64,
}

impl Default for WarpConfig {
    fn default() -> Self {
        WarpConfig { alpha: 50.0 }
    }
}

impl WarpConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha <= 0.0 {
            return Err(Error::Config(format!(
                "mask sharpness alpha must be finite and positive, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Warps `frame` by `flow` with bilinear sampling and clamp-to-edge borders.
///
/// This is the value-level entry point; the gradient tape exposes the same
/// kernel as a differentiable op.
pub fn bilinear_warp(frame: &Frame, flow: &FlowField) -> Result<Frame> {
    let (_, h, w) = frame.dim();
    if flow.dims() != (h, w) {
        return Err(Error::DimensionMismatch {
            context: "bilinear_warp".into(),
            expected: format!("flow of {h}x{w}"),
            actual: format!("{:?}", flow.dims()),
        });
    }
    if !flow.u.iter().all(|v| v.is_finite()) || !flow.v.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "bilinear_warp flow".into(),
        });
    }
    Ok(warp_forward(&frame.view(), &flow.to_tensor().view()))
}

/// Soft visibility weight per pixel: `exp(-alpha * Σ_c (i_t - warped)²)`.
///
/// `warped_i_prev` is the previous input frame warped onto `i_t`'s grid.
/// Values are in `(0, 1]`; identical frames give exactly 1. The mask is a
/// constant weight in the losses: no gradient flows through it.
pub fn visibility_mask(i_t: &Frame, warped_i_prev: &Frame, cfg: WarpConfig) -> Result<Mask> {
    if i_t.dim() != warped_i_prev.dim() {
        return Err(Error::DimensionMismatch {
            context: "visibility_mask".into(),
            expected: format!("{:?}", i_t.dim()),
            actual: format!("{:?}", warped_i_prev.dim()),
        });
    }
    let (_, h, w) = i_t.dim();
    let mut mask = Mask::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut sq = 0.0;
            for c in 0..3 {
                let d = i_t[[c, y, x]] - warped_i_prev[[c, y, x]];
                sq += d * d;
            }
            mask[[y, x]] = (-cfg.alpha * sq).exp();
        }
    }
    Ok(mask)
}
