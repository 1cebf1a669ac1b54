//! Bilinear warping of an image by a dense displacement field.
//!
//! `flow` has shape `(2, h, w)`: channel 0 is the horizontal displacement u,
//! channel 1 the vertical displacement v. Output pixel `(y, x)` samples the
//! source image at `(x + u[y,x], y + v[y,x])` with bilinear interpolation and
//! clamp-to-edge handling of out-of-range coordinates.

use ndarray::{Array3, ArrayView3};

/// Sampling bookkeeping for one axis: base index, fractional weight and a
/// gate that zeroes the flow gradient when the coordinate was clamped.
/// A single-sample axis always clamps.
fn locate(s: f64, n: usize) -> (usize, f64, f64) {
    if n == 1 {
        let gate = if s == 0.0 { 1.0 } else { 0.0 };
        return (0, 0.0, gate);
    }
    let max = (n - 1) as f64;
    let gate = if s < 0.0 || s > max { 0.0 } else { 1.0 };
    let sc = s.clamp(0.0, max);
    let mut i0 = sc.floor();
    if i0 > max - 1.0 {
        i0 = max - 1.0;
    }
    (i0 as usize, sc - i0, gate)
}

/// Warps `img` by `flow`. Shapes: `img (c, h, w)`, `flow (2, h, w)`.
pub fn warp_forward(img: &ArrayView3<f64>, flow: &ArrayView3<f64>) -> Array3<f64> {
    let (c, h, w) = img.dim();
    assert_eq!(flow.dim(), (2, h, w), "flow shape does not match image");
    let mut out = Array3::zeros((c, h, w));
    for y in 0..h {
        for x in 0..w {
            let sx = x as f64 + flow[[0, y, x]];
            let sy = y as f64 + flow[[1, y, x]];
            let (x0, wx, _) = locate(sx, w);
            let (y0, wy, _) = locate(sy, h);
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            for ch in 0..c {
                let tl = img[[ch, y0, x0]];
                let tr = img[[ch, y0, x1]];
                let bl = img[[ch, y1, x0]];
                let br = img[[ch, y1, x1]];
                out[[ch, y, x]] =
                    (1.0 - wy) * ((1.0 - wx) * tl + wx * tr) + wy * ((1.0 - wx) * bl + wx * br);
            }
        }
    }
    out
}

/// Gradients of [`warp_forward`] with respect to the image and the flow.
///
/// The flow gradient is the right-sided derivative of the piecewise-linear
/// interpolant and is zero wherever the sampling coordinate was clamped to
/// the image border.
pub fn warp_backward(
    img: &ArrayView3<f64>,
    flow: &ArrayView3<f64>,
    g: &ArrayView3<f64>,
) -> (Array3<f64>, Array3<f64>) {
    let (c, h, w) = img.dim();
    assert_eq!(flow.dim(), (2, h, w));
    assert_eq!(g.dim(), (c, h, w));
    let mut gimg = Array3::zeros((c, h, w));
    let mut gflow = Array3::zeros((2, h, w));
    for y in 0..h {
        for x in 0..w {
            let sx = x as f64 + flow[[0, y, x]];
            let sy = y as f64 + flow[[1, y, x]];
            let (x0, wx, gate_x) = locate(sx, w);
            let (y0, wy, gate_y) = locate(sy, h);
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let mut du = 0.0;
            let mut dv = 0.0;
            for ch in 0..c {
                let go = g[[ch, y, x]];
                if go == 0.0 {
                    continue;
                }
                let tl = img[[ch, y0, x0]];
                let tr = img[[ch, y0, x1]];
                let bl = img[[ch, y1, x0]];
                let br = img[[ch, y1, x1]];
                gimg[[ch, y0, x0]] += go * (1.0 - wy) * (1.0 - wx);
                gimg[[ch, y0, x1]] += go * (1.0 - wy) * wx;
                gimg[[ch, y1, x0]] += go * wy * (1.0 - wx);
                gimg[[ch, y1, x1]] += go * wy * wx;
                du += go * ((1.0 - wy) * (tr - tl) + wy * (br - bl));
                dv += go * ((1.0 - wx) * (bl - tl) + wx * (br - tr));
            }
            gflow[[0, y, x]] = gate_x * du;
            gflow[[1, y, x]] = gate_y * dv;
        }
    }
    (gimg, gflow)
}
