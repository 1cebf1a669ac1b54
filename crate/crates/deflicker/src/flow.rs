//! Optical flow supply and occlusion masks.
//!
//! Losses and metrics never compute flow themselves; they ask a
//! [`FlowProvider`]. Three backends exist:
//!
//! - `Analytic`: exact flow from a synthetic motion spec. The only backend
//!   with zero flow error, used by the acceptance fixtures.
//! - `File`: precomputed `.flo` files named `flow_t{t}_ref{ref}.flo`.
//! - `Estimated`: a best-effort coarse-to-fine variational estimator for
//!   real footage with no flow files. Excluded from acceptance-critical
//!   paths by design.
//!
//! Flow convention everywhere: `flow(t, reference)` aligns frame
//! `reference` onto frame `t`'s pixel grid, i.e. sampling frame `reference`
//! at `x + F(x)` reproduces the content of frame `t` at `x`.

use std::path::PathBuf;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthgen::{self, MotionSpec};
use crate::tensor::warp::warp_forward;
use crate::video_data::{read_flo, FlowField, Frame, FrameSequence, Mask};

/// Tuning for the variational estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorParams {
    /// Pyramid levels (1 = full resolution only).
    pub levels: usize,
    /// Relaxation iterations per warp update.
    pub iterations: usize,
    /// Smoothness weight; larger values favor smoother fields.
    pub smoothness: f64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        EstimatorParams {
            levels: 3,
            iterations: 100,
            smoothness: 0.5,
        }
    }
}

impl EstimatorParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 || self.iterations < 1 {
            return Err(Error::Config(
                "flow estimator needs at least 1 level and 1 iteration".into(),
            ));
        }
        if !self.smoothness.is_finite() || self.smoothness <= 0.0 {
            return Err(Error::Config(format!(
                "flow smoothness must be finite and positive, got {}",
                self.smoothness
            )));
        }
        Ok(())
    }
}

/// Consistency test constants for [`occlusion_mask`]: occluded where
/// `|w_tilde + w_hat|^2 > ratio * (|w_tilde|^2 + |w_hat|^2) + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionThresholds {
    pub ratio: f64,
    pub offset: f64,
}

impl Default for OcclusionThresholds {
    fn default() -> Self {
        OcclusionThresholds {
            ratio: 0.01,
            offset: 0.5,
        }
    }
}

/// Where flow comes from.
#[derive(Debug, Clone)]
pub enum FlowProvider {
    /// Exact fields derived from a synthetic motion spec.
    Analytic(MotionSpec),
    /// `.flo` files in a directory, one per `(t, reference)` pair.
    File { dir: PathBuf },
    /// On-demand estimation from the frames themselves.
    Estimated(EstimatorParams),
}

/// File name for the flow pair `(t, reference)` inside a sequence's flow
/// directory.
pub fn flow_file_name(t: usize, reference: usize) -> String {
    format!("flow_t{t}_ref{reference}.flo")
}

impl FlowProvider {
    /// Short backend name stamped into reports.
    pub fn id(&self) -> &'static str {
        match self {
            FlowProvider::Analytic(_) => "analytic",
            FlowProvider::File { .. } => "file",
            FlowProvider::Estimated(_) => "estimated",
        }
    }

    /// Flow aligning frame `reference` onto frame `t`'s grid, for any
    /// distinct pair of valid indices.
    pub fn flow(&self, seq: &FrameSequence, t: usize, reference: usize) -> Result<FlowField> {
        let len = seq.len();
        if t == reference || !(1..=len).contains(&t) || !(1..=len).contains(&reference) {
            return Err(Error::Contract(format!(
                "flow pair ({t}, {reference}) invalid for a {len}-frame sequence"
            )));
        }
        match self {
            FlowProvider::Analytic(spec) => {
                if spec.height != seq.height() || spec.width != seq.width() {
                    return Err(Error::DimensionMismatch {
                        context: "analytic flow".into(),
                        expected: format!("{}x{}", spec.height, spec.width),
                        actual: format!("{}x{}", seq.height(), seq.width()),
                    });
                }
                if t > spec.frames || reference > spec.frames {
                    return Err(Error::FlowUnavailable {
                        t,
                        reference,
                        reason: format!("motion spec covers only {} frames", spec.frames),
                    });
                }
                Ok(synthgen::flow_between(spec, t, reference))
            }
            FlowProvider::File { dir } => {
                let path = dir.join(flow_file_name(t, reference));
                if !path.exists() {
                    return Err(Error::FlowUnavailable {
                        t,
                        reference,
                        reason: format!("no flow file at {}", path.display()),
                    });
                }
                let flow = read_flo(&path)?;
                if flow.dims() != (seq.height(), seq.width()) {
                    return Err(Error::DimensionMismatch {
                        context: format!("flow file {}", path.display()),
                        expected: format!("{}x{}", seq.height(), seq.width()),
                        actual: format!("{:?}", flow.dims()),
                    });
                }
                Ok(flow)
            }
            FlowProvider::Estimated(params) => {
                estimate_flow(seq.frame(reference), seq.frame(t), params)
            }
        }
    }

    /// Flow for the training losses: `reference` strictly before `t`.
    pub fn get_backward_flow(
        &self,
        seq: &FrameSequence,
        t: usize,
        reference: usize,
    ) -> Result<FlowField> {
        if !(1 <= reference && reference < t && t <= seq.len()) {
            return Err(Error::Contract(format!(
                "backward flow needs 1 <= reference < t <= {}, got t={t} reference={reference}",
                seq.len()
            )));
        }
        self.flow(seq, t, reference)
    }

    /// Non-occlusion mask on frame `t`'s grid for the pair `(t, reference)`.
    ///
    /// The analytic backend knows occlusion geometrically (content without a
    /// source in the reference frame). The other backends infer it from
    /// forward-backward flow consistency, which needs both directions of the
    /// pair.
    pub fn occlusion(
        &self,
        seq: &FrameSequence,
        t: usize,
        reference: usize,
        thresholds: OcclusionThresholds,
    ) -> Result<Mask> {
        match self {
            FlowProvider::Analytic(spec) => {
                // Validate indices through the same path as flow().
                self.flow(seq, t, reference)?;
                Ok(synthgen::occlusion_between(spec, t, reference))
            }
            _ => {
                let bw = self.flow(seq, t, reference)?;
                let fw = self.flow(seq, reference, t)?;
                occlusion_mask(&fw, &bw, thresholds)
            }
        }
    }
}

/// Binary non-occlusion mask from forward-backward consistency.
///
/// `fw` aligns `t` onto `reference` (lives on the reference grid), `bw`
/// aligns `reference` onto `t` (lives on `t`'s grid, where the mask is
/// produced). A consistent round trip has `fw(x + bw(x)) == -bw(x)`.
pub fn occlusion_mask(
    fw: &FlowField,
    bw: &FlowField,
    thresholds: OcclusionThresholds,
) -> Result<Mask> {
    if fw.dims() != bw.dims() {
        return Err(Error::DimensionMismatch {
            context: "occlusion_mask".into(),
            expected: format!("{:?}", fw.dims()),
            actual: format!("{:?}", bw.dims()),
        });
    }
    let (h, w) = bw.dims();
    // Resample the forward field at the positions the backward field points
    // to, so both live on t's grid.
    let fw_on_t = warp_forward(&fw.to_tensor().view(), &bw.to_tensor().view());
    let mut mask = Mask::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let (wu, wv) = (fw_on_t[[0, y, x]], fw_on_t[[1, y, x]]);
            let (bu, bv) = (bw.u[[y, x]] as f64, bw.v[[y, x]] as f64);
            let sum_sq = (wu + bu).powi(2) + (wv + bv).powi(2);
            let mag_sq = wu * wu + wv * wv + bu * bu + bv * bv;
            if sum_sq <= thresholds.ratio * mag_sq + thresholds.offset {
                mask[[y, x]] = 1.0;
            }
        }
    }
    Ok(mask)
}

// ----------------------------------------------------------------------
// Coarse-to-fine variational estimation
// ----------------------------------------------------------------------

/// Estimates the flow that aligns `a` onto `b`'s grid (sampling `a` at
/// `x + F(x)` approximates `b`). Best effort: accuracy depends on texture.
pub fn estimate_flow(a: &Frame, b: &Frame, params: &EstimatorParams) -> Result<FlowField> {
    params.validate()?;
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            context: "estimate_flow".into(),
            expected: format!("{:?}", a.dim()),
            actual: format!("{:?}", b.dim()),
        });
    }
    let (_, h, w) = a.dim();

    // Pyramid of smoothed grayscale images, finest first.
    let mut pyr_a = vec![smooth3(&to_gray(a))];
    let mut pyr_b = vec![smooth3(&to_gray(b))];
    for _ in 1..params.levels {
        let last_a = pyr_a.last().unwrap();
        if last_a.dim().0 < 16 || last_a.dim().1 < 16 {
            break;
        }
        pyr_a.push(downsample2(last_a));
        pyr_b.push(downsample2(pyr_b.last().unwrap()));
    }

    let coarsest = pyr_a.last().unwrap().dim();
    let mut u = Array2::<f64>::zeros(coarsest);
    let mut v = Array2::<f64>::zeros(coarsest);
    for level in (0..pyr_a.len()).rev() {
        let target = pyr_a[level].dim();
        if u.dim() != target {
            let su = target.1 as f64 / u.dim().1 as f64;
            let sv = target.0 as f64 / u.dim().0 as f64;
            u = resize_bilinear(&u, target).mapv(|x| x * su);
            v = resize_bilinear(&v, target).mapv(|x| x * sv);
        }
        relax_level(&pyr_a[level], &pyr_b[level], &mut u, &mut v, params);
    }

    debug_assert_eq!(u.dim(), (h, w));
    Ok(FlowField {
        u: u.mapv(|x| x as f32),
        v: v.mapv(|x| x as f32),
    })
}

/// Three warp-and-linearize rounds of relaxation at one pyramid level.
fn relax_level(
    a: &Array2<f64>,
    b: &Array2<f64>,
    u: &mut Array2<f64>,
    v: &mut Array2<f64>,
    params: &EstimatorParams,
) {
    let (h, w) = a.dim();
    let alpha_sq = params.smoothness * params.smoothness;
    for _ in 0..3 {
        let aw = warp_gray(a, u, v);
        let (axx, axy) = gradients(&aw);
        let (bxx, bxy) = gradients(b);
        let ix = 0.5 * (&axx + &bxx);
        let iy = 0.5 * (&axy + &bxy);
        let it = &aw - b;
        let denom = ix.mapv(|g| g * g) + iy.mapv(|g| g * g) + alpha_sq;

        let mut du = Array2::<f64>::zeros((h, w));
        let mut dv = Array2::<f64>::zeros((h, w));
        for _ in 0..params.iterations {
            let dub = avg4(&du);
            let dvb = avg4(&dv);
            let t = (&ix * &dub + &iy * &dvb + &it) / &denom;
            du = dub - &ix * &t;
            dv = dvb - &iy * &t;
        }
        *u += &du;
        *v += &dv;
    }
}

fn to_gray(frame: &Frame) -> Array2<f64> {
    let (_, h, w) = frame.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        (frame[[0, y, x]] + frame[[1, y, x]] + frame[[2, y, x]]) / 3.0
    })
}

/// 3x3 binomial smoothing with replicated edges.
fn smooth3(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let at = |y: isize, x: isize| {
        img[[
            y.clamp(0, h as isize - 1) as usize,
            x.clamp(0, w as isize - 1) as usize,
        ]]
    };
    Array2::from_shape_fn((h, w), |(y, x)| {
        let (y, x) = (y as isize, x as isize);
        let mut acc = 0.0;
        for (dy, wy) in [(-1, 1.0), (0, 2.0), (1, 1.0)] {
            for (dx, wx) in [(-1, 1.0), (0, 2.0), (1, 1.0)] {
                acc += wy * wx * at(y + dy, x + dx);
            }
        }
        acc / 16.0
    })
}

fn downsample2(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let (h2, w2) = (h / 2, w / 2);
    Array2::from_shape_fn((h2, w2), |(y, x)| {
        (img[[2 * y, 2 * x]]
            + img[[2 * y + 1, 2 * x]]
            + img[[2 * y, 2 * x + 1]]
            + img[[2 * y + 1, 2 * x + 1]])
            / 4.0
    })
}

fn resize_bilinear(img: &Array2<f64>, target: (usize, usize)) -> Array2<f64> {
    let (h1, w1) = img.dim();
    let (h2, w2) = target;
    let fy = if h2 > 1 { (h1 - 1) as f64 / (h2 - 1) as f64 } else { 0.0 };
    let fx = if w2 > 1 { (w1 - 1) as f64 / (w2 - 1) as f64 } else { 0.0 };
    Array2::from_shape_fn((h2, w2), |(y, x)| {
        let sy = y as f64 * fy;
        let sx = x as f64 * fx;
        let y0 = (sy.floor() as usize).min(h1.saturating_sub(2));
        let x0 = (sx.floor() as usize).min(w1.saturating_sub(2));
        let (y1, x1) = ((y0 + 1).min(h1 - 1), (x0 + 1).min(w1 - 1));
        let (wy, wx) = (sy - y0 as f64, sx - x0 as f64);
        (1.0 - wy) * ((1.0 - wx) * img[[y0, x0]] + wx * img[[y0, x1]])
            + wy * ((1.0 - wx) * img[[y1, x0]] + wx * img[[y1, x1]])
    })
}

fn warp_gray(img: &Array2<f64>, u: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let mut chan = Array3::zeros((1, h, w));
    chan.index_axis_mut(ndarray::Axis(0), 0).assign(img);
    let mut flow = Array3::zeros((2, h, w));
    flow.index_axis_mut(ndarray::Axis(0), 0).assign(u);
    flow.index_axis_mut(ndarray::Axis(0), 1).assign(v);
    let out = warp_forward(&chan.view(), &flow.view());
    out.index_axis(ndarray::Axis(0), 0).to_owned()
}

/// Central-difference gradients with one-sided borders: (d/dx, d/dy).
fn gradients(img: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = img.dim();
    let gx = Array2::from_shape_fn((h, w), |(y, x)| {
        let x0 = x.saturating_sub(1);
        let x1 = (x + 1).min(w - 1);
        (img[[y, x1]] - img[[y, x0]]) / (x1 - x0).max(1) as f64
    });
    let gy = Array2::from_shape_fn((h, w), |(y, x)| {
        let y0 = y.saturating_sub(1);
        let y1 = (y + 1).min(h - 1);
        (img[[y1, x]] - img[[y0, x]]) / (y1 - y0).max(1) as f64
    });
    (gx, gy)
}

/// Four-neighbour average with replicated edges.
fn avg4(f: &Array2<f64>) -> Array2<f64> {
    let (h, w) = f.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let up = f[[y.saturating_sub(1), x]];
        let down = f[[(y + 1).min(h - 1), x]];
        let left = f[[y, x.saturating_sub(1)]];
        let right = f[[y, (x + 1).min(w - 1)]];
        (up + down + left + right) / 4.0
    })
}
