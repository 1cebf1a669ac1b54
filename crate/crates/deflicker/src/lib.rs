//! Removes temporal flicker from per-frame-processed videos.
//!
//! Image filters applied frame by frame (colorization, enhancement, style
//! transfer) produce sequences whose per-frame results disagree over time and
//! flicker. This crate trains a small recurrent transformation network that
//! takes the original video and its flickering processed counterpart and
//! emits a temporally stable video that stays perceptually close to the
//! processed one. Supervision is blind to the filter that caused the flicker:
//! the losses are a perceptual distance to the processed frames plus
//! short-term and long-term warp losses driven by optical flow.

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod flow;
pub mod perception;
pub mod synthgen;
pub mod temporal_losses;
pub mod tensor;
pub mod tensor_store;
pub mod training;
pub mod transform_net;
pub mod video_data;
pub mod warping;

pub use error::{Error, Result};

// The guide's code blocks compile and run as doc-tests, so the book can
// never drift from the library.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/video-data.md")]
    mod video_data {}
    #[doc = include_str!("../../../book/src/synthetic-scenes.md")]
    mod synthetic_scenes {}
    #[doc = include_str!("../../../book/src/optical-flow.md")]
    mod optical_flow {}
    #[doc = include_str!("../../../book/src/warping-and-masks.md")]
    mod warping_and_masks {}
    #[doc = include_str!("../../../book/src/perceptual-features.md")]
    mod perceptual_features {}
    #[doc = include_str!("../../../book/src/gradient-tape.md")]
    mod gradient_tape {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
