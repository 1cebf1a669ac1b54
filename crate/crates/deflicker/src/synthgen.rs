//! Procedural video sequences with exact ground-truth flow and occlusion,
//! plus a flicker simulator that stands in for an unstable per-frame filter.
//!
//! Frames are windows into a larger static canvas moved by a per-frame
//! motion model, so the backward flow between any two frames is known in
//! closed form rather than estimated. Integer translations are the canonical
//! fixtures: they resample the canvas without interpolation, which makes the
//! ground-truth warp identity exact. The flicker simulator perturbs each
//! frame with a seeded gain/bias (or gamma) schedule and returns the
//! schedule, so tests can compute expected metric values analytically.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video_data::{BitDepth, FlowField, Frame, FrameSequence, Mask};

/// Static texture the frames sample from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaseImage {
    /// Two-color checkerboard with `cell`-pixel squares.
    Checkerboard { cell: usize },
    /// Blocky random RGB noise with `scale`-pixel blocks, values in
    /// `[0.1, 0.8]` so moderate gain flicker never clamps.
    NoiseTexture { scale: usize },
    /// A user-supplied PNG large enough to cover the motion envelope.
    UserImage { path: PathBuf },
}

/// Per-frame global motion. Displacements accumulate frame over frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MotionModel {
    /// Content moves by `(dx, dy)` pixels per frame.
    Translation { dx: f64, dy: f64 },
    /// Translation plus rotation (degrees/frame) and uniform scale
    /// (factor/frame) about the frame center.
    Affine {
        dx: f64,
        dy: f64,
        rotate_deg: f64,
        scale: f64,
    },
}

/// Full recipe for one synthetic sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSpec {
    pub base: BaseImage,
    pub motion: MotionModel,
    /// Number of frames, at least 2.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Seed for the noise texture; unused by the other base images.
    pub seed: u64,
}

/// Kind of temporal instability to inject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FlickerMode {
    /// Gain `1 + amplitude * sin(2*pi*t / period)` on all channels, no bias.
    BrightnessSinusoid { period: f64 },
    /// Independent per-frame, per-channel random gains and small biases.
    ColorJitter,
    /// Per-frame random gamma exponent in `1 +- amplitude`.
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlickerSpec {
    pub mode: FlickerMode,
    /// Strength of the perturbation, in `[0, 1)`.
    pub amplitude: f64,
    pub seed: u64,
}

/// One frame's perturbation, reported back so oracles can reproduce it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FrameAdjust {
    /// `P = clamp(gain * I + bias)`, per channel.
    Affine { gain: [f64; 3], bias: [f64; 3] },
    /// `P = I ^ exponent`.
    Gamma { exponent: f64 },
}

/// A generated sequence with its exact flows and validity masks.
///
/// Map keys are `(t, reference)` meaning the flow that aligns frame
/// `reference` onto frame `t`'s grid. Generated keys cover what training
/// and evaluation consume: `(t, t-1)` and `(t, 1)` for `t >= 2`, plus
/// `(t, t+1)` for `t < frames. Masks are geometric: 1 where the sampled
/// position lands inside the reference frame, 0 where content is new.
#[derive(Debug)]
pub struct SyntheticSequence {
    pub frames: FrameSequence,
    pub flows: BTreeMap<(usize, usize), FlowField>,
    pub occlusions: BTreeMap<(usize, usize), Mask>,
}

impl MotionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::SequenceTooShort {
                needed: 2,
                got: self.frames,
            });
        }
        if self.height < 4 || self.width < 4 {
            return Err(Error::Config(format!(
                "frame size {}x{} too small to animate",
                self.height, self.width
            )));
        }
        let (dx, dy) = match self.motion {
            MotionModel::Translation { dx, dy } => (dx, dy),
            MotionModel::Affine {
                dx,
                dy,
                rotate_deg,
                scale,
            } => {
                if !rotate_deg.is_finite() || !scale.is_finite() || scale <= 0.0 {
                    return Err(Error::Config("affine motion parameters invalid".into()));
                }
                (dx, dy)
            }
        };
        if !dx.is_finite() || !dy.is_finite() {
            return Err(Error::Config("motion displacement must be finite".into()));
        }
        let span = (self.frames - 1) as f64;
        if span * dx.abs() >= self.width as f64 || span * dy.abs() >= self.height as f64 {
            return Err(Error::Config(format!(
                "cumulative motion ({}, {}) leaves no shared content on a {}x{} frame",
                span * dx,
                span * dy,
                self.width,
                self.height
            )));
        }
        match &self.base {
            BaseImage::Checkerboard { cell } if *cell == 0 => {
                Err(Error::Config("checkerboard cell must be positive".into()))
            }
            BaseImage::NoiseTexture { scale } if *scale == 0 => {
                Err(Error::Config("noise block scale must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

impl FlickerSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.amplitude.is_finite() || !(0.0..1.0).contains(&self.amplitude) {
            return Err(Error::Config(format!(
                "flicker amplitude must be in [0, 1), got {}",
                self.amplitude
            )));
        }
        if let FlickerMode::BrightnessSinusoid { period } = self.mode {
            if !period.is_finite() || period <= 0.0 {
                return Err(Error::Config(format!(
                    "flicker period must be positive, got {period}"
                )));
            }
        }
        Ok(())
    }
}

// ----------------------------------------------------------------------
// Affine frame-to-canvas maps
// ----------------------------------------------------------------------

/// Affine map `(x, y) -> (a x + b y + tx, c x + d y + ty)`.
#[derive(Debug, Clone, Copy)]
struct Affine2 {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    tx: f64,
    ty: f64,
}

impl Affine2 {
    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a * x + self.b * y + self.tx,
            self.c * x + self.d * y + self.ty,
        )
    }

    fn inverse(&self) -> Affine2 {
        let det = self.a * self.d - self.b * self.c;
        assert!(det.abs() > 1e-12, "singular motion transform");
        let (ia, ib, ic, id) = (self.d / det, -self.b / det, -self.c / det, self.a / det);
        Affine2 {
            a: ia,
            b: ib,
            c: ic,
            d: id,
            tx: -(ia * self.tx + ib * self.ty),
            ty: -(ic * self.tx + id * self.ty),
        }
    }
}

/// Map from frame `t`'s pixel coordinates into motion space (canvas
/// coordinates before the margin shift). 1-based `t`.
fn frame_map(spec: &MotionSpec, t: usize) -> Affine2 {
    let step = (t - 1) as f64;
    let (cx, cy) = (
        (spec.width - 1) as f64 / 2.0,
        (spec.height - 1) as f64 / 2.0,
    );
    match spec.motion {
        MotionModel::Translation { dx, dy } => Affine2 {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
            tx: -step * dx,
            ty: -step * dy,
        },
        MotionModel::Affine {
            dx,
            dy,
            rotate_deg,
            scale,
        } => {
            // Linear part s^step * R(step * angle) about the frame center;
            // content displaced by step*(dx, dy) like the translation model.
            let ang = step * rotate_deg.to_radians();
            let s = scale.powf(step);
            let (a, b) = (s * ang.cos(), -s * ang.sin());
            let (c, d) = (s * ang.sin(), s * ang.cos());
            Affine2 {
                a,
                b,
                c,
                d,
                tx: cx - (a * cx + b * cy) - step * dx,
                ty: cy - (c * cx + d * cy) - step * dy,
            }
        }
    }
}

/// Exact backward flow that aligns frame `reference` onto frame `t`'s grid:
/// sampling frame `reference` at `x + flow(x)` reproduces frame `t`.
pub fn flow_between(spec: &MotionSpec, t: usize, reference: usize) -> FlowField {
    let to_canvas = frame_map(spec, t);
    let from_canvas = frame_map(spec, reference).inverse();
    let mut flow = FlowField::zeros(spec.height, spec.width);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let p = to_canvas.apply(x as f64, y as f64);
            let (qx, qy) = from_canvas.apply(p.0, p.1);
            flow.u[[y, x]] = (qx - x as f64) as f32;
            flow.v[[y, x]] = (qy - y as f64) as f32;
        }
    }
    flow
}

/// Geometric validity of [`flow_between`]: 1 where the sampled position lies
/// inside the reference frame, 0 where the content has no source there.
pub fn occlusion_between(spec: &MotionSpec, t: usize, reference: usize) -> Mask {
    let flow = flow_between(spec, t, reference);
    let mut mask = Mask::zeros((spec.height, spec.width));
    let (xmax, ymax) = ((spec.width - 1) as f64, (spec.height - 1) as f64);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let sx = x as f64 + flow.u[[y, x]] as f64;
            let sy = y as f64 + flow.v[[y, x]] as f64;
            if (0.0..=xmax).contains(&sx) && (0.0..=ymax).contains(&sy) {
                mask[[y, x]] = 1.0;
            }
        }
    }
    mask
}

// ----------------------------------------------------------------------
// Canvas rendering
// ----------------------------------------------------------------------

fn checkerboard_color(parity: usize) -> [f64; 3] {
    // Both palettes stay within [0.1, 0.8]: a 1.2x gain cannot clamp them.
    if parity == 0 {
        [0.75, 0.35, 0.15]
    } else {
        [0.15, 0.55, 0.75]
    }
}

fn build_canvas(spec: &MotionSpec, ch: usize, cw: usize) -> Result<Array3<f64>> {
    match &spec.base {
        BaseImage::Checkerboard { cell } => {
            Ok(Array3::from_shape_fn((3, ch, cw), |(c, y, x)| {
                checkerboard_color((y / cell + x / cell) % 2)[c]
            }))
        }
        BaseImage::NoiseTexture { scale } => {
            let blocks_y = ch.div_ceil(*scale);
            let blocks_x = cw.div_ceil(*scale);
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let mut colors = Vec::with_capacity(blocks_y * blocks_x);
            for _ in 0..blocks_y * blocks_x {
                colors.push([
                    rng.random_range(0.1..0.8),
                    rng.random_range(0.1..0.8),
                    rng.random_range(0.1..0.8),
                ]);
            }
            Ok(Array3::from_shape_fn((3, ch, cw), |(c, y, x)| {
                colors[(y / scale) * blocks_x + (x / scale)][c]
            }))
        }
        BaseImage::UserImage { path } => {
            let img = image::open(path)
                .map_err(|e| Error::image(path, e))?
                .to_rgb8();
            let (w, h) = img.dimensions();
            if (h as usize) < ch || (w as usize) < cw {
                return Err(Error::Config(format!(
                    "base image {} is {}x{} but the motion envelope needs {}x{}",
                    path.display(),
                    w,
                    h,
                    cw,
                    ch
                )));
            }
            Ok(Array3::from_shape_fn((3, ch, cw), |(c, y, x)| {
                img.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0
            }))
        }
    }
}

fn sample_canvas(canvas: &Array3<f64>, c: usize, x: f64, y: f64) -> f64 {
    let (_, h, w) = canvas.dim();
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = (xc.floor() as usize).min(w - 2);
    let y0 = (yc.floor() as usize).min(h - 2);
    let (wx, wy) = (xc - x0 as f64, yc - y0 as f64);
    (1.0 - wy) * ((1.0 - wx) * canvas[[c, y0, x0]] + wx * canvas[[c, y0, x0 + 1]])
        + wy * ((1.0 - wx) * canvas[[c, y0 + 1, x0]] + wx * canvas[[c, y0 + 1, x0 + 1]])
}

/// Renders the frames and computes the exact flow/occlusion maps training
/// and evaluation need.
pub fn generate_sequence(spec: &MotionSpec) -> Result<SyntheticSequence> {
    spec.validate()?;
    let t_count = spec.frames;

    // Margin: how far any frame's sampling positions stray outside the
    // frame rectangle, over all frames and corners.
    let mut lo = (0.0f64, 0.0f64);
    let mut hi = ((spec.width - 1) as f64, (spec.height - 1) as f64);
    for t in 1..=t_count {
        let map = frame_map(spec, t);
        for &(x, y) in &[
            (0.0, 0.0),
            ((spec.width - 1) as f64, 0.0),
            (0.0, (spec.height - 1) as f64),
            ((spec.width - 1) as f64, (spec.height - 1) as f64),
        ] {
            let (px, py) = map.apply(x, y);
            lo = (lo.0.min(px), lo.1.min(py));
            hi = (hi.0.max(px), hi.1.max(py));
        }
    }
    let margin = (-lo.0).max(-lo.1).max(hi.0 - (spec.width - 1) as f64)
        .max(hi.1 - (spec.height - 1) as f64)
        .max(0.0)
        .ceil() as usize
        + 1;

    let (ch, cw) = (spec.height + 2 * margin, spec.width + 2 * margin);
    let canvas = build_canvas(spec, ch, cw)?;

    let mut frames = Vec::with_capacity(t_count);
    for t in 1..=t_count {
        let map = frame_map(spec, t);
        frames.push(Array3::from_shape_fn(
            (3, spec.height, spec.width),
            |(c, y, x)| {
                let (px, py) = map.apply(x as f64, y as f64);
                sample_canvas(&canvas, c, px + margin as f64, py + margin as f64)
            },
        ));
    }

    let mut flows = BTreeMap::new();
    let mut occlusions = BTreeMap::new();
    let mut keys = Vec::new();
    for t in 2..=t_count {
        keys.push((t, t - 1));
        if t > 2 {
            keys.push((t, 1));
        }
    }
    for t in 1..t_count {
        keys.push((t, t + 1));
    }
    for (t, reference) in keys {
        flows.insert((t, reference), flow_between(spec, t, reference));
        occlusions.insert((t, reference), occlusion_between(spec, t, reference));
    }

    Ok(SyntheticSequence {
        frames: FrameSequence::new(frames, BitDepth::Eight)?,
        flows,
        occlusions,
    })
}

// ----------------------------------------------------------------------
// Flicker simulation
// ----------------------------------------------------------------------

/// The per-frame adjustments a flicker spec produces for `t_count` frames.
///
/// Frame indices are 1-based in the sinusoid phase, so two runs over
/// sequences of different lengths agree on their common prefix.
pub fn flicker_schedule(spec: &FlickerSpec, t_count: usize) -> Vec<FrameAdjust> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (1..=t_count)
        .map(|t| match spec.mode {
            FlickerMode::BrightnessSinusoid { period } => {
                let gain = 1.0 + spec.amplitude * (2.0 * std::f64::consts::PI * t as f64 / period).sin();
                FrameAdjust::Affine {
                    gain: [gain; 3],
                    bias: [0.0; 3],
                }
            }
            FlickerMode::ColorJitter => {
                let mut gain = [0.0; 3];
                let mut bias = [0.0; 3];
                for c in 0..3 {
                    gain[c] = 1.0 + spec.amplitude * rng.random_range(-1.0..1.0);
                    bias[c] = 0.25 * spec.amplitude * rng.random_range(-1.0..1.0);
                }
                FrameAdjust::Affine { gain, bias }
            }
            FlickerMode::Gamma => FrameAdjust::Gamma {
                exponent: 1.0 + spec.amplitude * rng.random_range(-1.0..1.0),
            },
        })
        .collect()
}

/// Applies one adjustment to a frame, clamping back into `[0, 1]`.
pub fn apply_adjust(frame: &Frame, adjust: &FrameAdjust) -> Frame {
    let mut out = frame.clone();
    match *adjust {
        FrameAdjust::Affine { gain, bias } => {
            for (c, mut plane) in out.outer_iter_mut().enumerate() {
                plane.mapv_inplace(|v| (gain[c] * v + bias[c]).clamp(0.0, 1.0));
            }
        }
        FrameAdjust::Gamma { exponent } => {
            out.mapv_inplace(|v| v.clamp(0.0, 1.0).powf(exponent));
        }
    }
    out
}

/// Simulates an unstable per-frame filter. Returns the flickered sequence
/// and the exact schedule that produced it.
pub fn apply_flicker(
    seq: &FrameSequence,
    spec: &FlickerSpec,
) -> Result<(FrameSequence, Vec<FrameAdjust>)> {
    spec.validate()?;
    let schedule = flicker_schedule(spec, seq.len());
    let frames = seq
        .frames()
        .iter()
        .zip(&schedule)
        .map(|(f, adj)| apply_adjust(f, adj))
        .collect();
    Ok((FrameSequence::new(frames, seq.bit_depth)?, schedule))
}

/// The analytically known temporally consistent target: the first frame's
/// adjustment applied to every original frame. Its first frame equals the
/// flickered first frame, matching the transform network's hard constraint,
/// and all frames share one global adjustment so nothing flickers.
pub fn ideal_consistent_output(
    original: &FrameSequence,
    schedule: &[FrameAdjust],
) -> Result<FrameSequence> {
    let first = schedule.first().ok_or_else(|| Error::Contract(
        "empty flicker schedule".into(),
    ))?;
    let frames = original
        .frames()
        .iter()
        .map(|f| apply_adjust(f, first))
        .collect();
    FrameSequence::new(frames, original.bit_depth)
}
