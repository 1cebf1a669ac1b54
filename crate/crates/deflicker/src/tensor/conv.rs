//! Convolution kernels shared by the tape ops and by value-only forward passes.
//!
//! Layout conventions follow the usual deep-learning ones: activations are
//! `(channels, height, width)`, convolution weights are `(out, in, k, k)` and
//! transposed-convolution weights are `(in, out, k, k)`. Zero padding is
//! implicit (out-of-bounds taps contribute nothing).

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

/// `dot` may return an F-layout result (it can compute A.Bᵀ as (B.Aᵀ)ᵀ),
/// which a C-order reshape would reject. Normalize first.
fn into_standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Output spatial size of a convolution along one axis.
pub fn conv_out_len(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(
        input + 2 * pad >= k,
        "convolution input {input} with pad {pad} smaller than kernel {k}"
    );
    (input + 2 * pad - k) / stride + 1
}

/// Output spatial size of a transposed convolution along one axis.
pub fn conv_transpose_out_len(
    input: usize,
    k: usize,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> usize {
    assert!(output_pad < stride, "output padding must be < stride");
    let len = (input - 1) * stride + k + output_pad;
    assert!(len >= 2 * pad, "transposed convolution output underflow");
    len - 2 * pad
}

/// Unfolds `x` into a `(c*k*k, hout*wout)` matrix of receptive-field columns.
pub fn im2col(
    x: &ArrayView3<f64>,
    k: usize,
    stride: usize,
    pad: usize,
    hout: usize,
    wout: usize,
) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * k * k, hout * wout));
    for ci in 0..c {
        for di in 0..k {
            for dj in 0..k {
                let row = (ci * k + di) * k + dj;
                for i in 0..hout {
                    let src_i = (i * stride + di) as isize - pad as isize;
                    if src_i < 0 || src_i >= h as isize {
                        continue;
                    }
                    for j in 0..wout {
                        let src_j = (j * stride + dj) as isize - pad as isize;
                        if src_j < 0 || src_j >= w as isize {
                            continue;
                        }
                        cols[[row, i * wout + j]] = x[[ci, src_i as usize, src_j as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds columns back into a `(c, h, w)` image.
///
/// `hpos`/`wpos` are the number of column positions (the `hout`/`wout` that
/// produced `cols`).
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    cols: &ArrayView2<f64>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    hpos: usize,
    wpos: usize,
) -> Array3<f64> {
    assert_eq!(cols.dim(), (c * k * k, hpos * wpos));
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for di in 0..k {
            for dj in 0..k {
                let row = (ci * k + di) * k + dj;
                for i in 0..hpos {
                    let dst_i = (i * stride + di) as isize - pad as isize;
                    if dst_i < 0 || dst_i >= h as isize {
                        continue;
                    }
                    for j in 0..wpos {
                        let dst_j = (j * stride + dj) as isize - pad as isize;
                        if dst_j < 0 || dst_j >= w as isize {
                            continue;
                        }
                        out[[ci, dst_i as usize, dst_j as usize]] += cols[[row, i * wpos + j]];
                    }
                }
            }
        }
    }
    out
}

/// Strided 2-d convolution with zero padding and per-channel bias.
pub fn conv2d_forward(
    x: &ArrayView3<f64>,
    w: &ndarray::ArrayView4<f64>,
    b: &ndarray::ArrayView1<f64>,
    stride: usize,
    pad: usize,
) -> Array3<f64> {
    let (cin, h, wid) = x.dim();
    let (cout, wcin, k, k2) = w.dim();
    assert_eq!(k, k2, "kernels must be square");
    assert_eq!(cin, wcin, "input channels do not match weight");
    assert_eq!(b.len(), cout, "bias length does not match output channels");
    let hout = conv_out_len(h, k, stride, pad);
    let wout = conv_out_len(wid, k, stride, pad);

    let cols = im2col(x, k, stride, pad, hout, wout);
    let wmat = w.to_shape((cout, cin * k * k)).unwrap();
    let prod = into_standard(wmat.dot(&cols));
    let mut out = prod.into_shape_with_order((cout, hout, wout)).unwrap();
    for (mut plane, &bias) in out.axis_iter_mut(Axis(0)).zip(b.iter()) {
        plane += bias;
    }
    out
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub fn conv2d_backward(
    x: &ArrayView3<f64>,
    w: &ndarray::ArrayView4<f64>,
    g: &ArrayView3<f64>,
    stride: usize,
    pad: usize,
) -> (Array3<f64>, ndarray::Array4<f64>, ndarray::Array1<f64>) {
    let (cin, h, wid) = x.dim();
    let (cout, _, k, _) = w.dim();
    let (gc, hout, wout) = g.dim();
    assert_eq!(gc, cout);

    let gmat = g.to_shape((cout, hout * wout)).unwrap();
    let gb = g.sum_axis(Axis(2)).sum_axis(Axis(1));

    let cols = im2col(x, k, stride, pad, hout, wout);
    let gw_mat = into_standard(gmat.dot(&cols.t()));
    let gw = gw_mat.into_shape_with_order((cout, cin, k, k)).unwrap();

    let wmat = w.to_shape((cout, cin * k * k)).unwrap();
    let gcols = wmat.t().dot(&gmat);
    let gx = col2im(&gcols.view(), cin, h, wid, k, stride, pad, hout, wout);
    (gx, gw, gb)
}

/// Strided 2-d transposed convolution (fractionally strided upsampling).
///
/// `w` has shape `(cin, cout, k, k)`. With `stride == 2`, `pad == (k - 1) / 2`
/// and `output_pad == 1` the spatial size exactly doubles.
pub fn conv_transpose2d_forward(
    x: &ArrayView3<f64>,
    w: &ndarray::ArrayView4<f64>,
    b: &ndarray::ArrayView1<f64>,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> Array3<f64> {
    let (cin, hin, win) = x.dim();
    let (wcin, cout, k, k2) = w.dim();
    assert_eq!(k, k2, "kernels must be square");
    assert_eq!(cin, wcin, "input channels do not match weight");
    assert_eq!(b.len(), cout, "bias length does not match output channels");
    let hout = conv_transpose_out_len(hin, k, stride, pad, output_pad);
    let wout = conv_transpose_out_len(win, k, stride, pad, output_pad);

    let wmat = w.to_shape((cin, cout * k * k)).unwrap();
    let xmat = x.to_shape((cin, hin * win)).unwrap();
    let cols = wmat.t().dot(&xmat);
    let mut out = col2im(&cols.view(), cout, hout, wout, k, stride, pad, hin, win);
    for (mut plane, &bias) in out.axis_iter_mut(Axis(0)).zip(b.iter()) {
        plane += bias;
    }
    out
}

/// Gradients of [`conv_transpose2d_forward`] w.r.t. input, weight and bias.
pub fn conv_transpose2d_backward(
    x: &ArrayView3<f64>,
    w: &ndarray::ArrayView4<f64>,
    g: &ArrayView3<f64>,
    stride: usize,
    pad: usize,
) -> (Array3<f64>, ndarray::Array4<f64>, ndarray::Array1<f64>) {
    let (cin, hin, win) = x.dim();
    let (_, cout, k, _) = w.dim();

    let gb = g.sum_axis(Axis(2)).sum_axis(Axis(1));

    // The forward pass scattered columns into the output, so the backward
    // pass gathers them: im2col over the output gradient lands on the same
    // taps the forward wrote to.
    let gcols = im2col(g, k, stride, pad, hin, win);
    let wmat = w.to_shape((cin, cout * k * k)).unwrap();
    let gx_mat = into_standard(wmat.dot(&gcols));
    let gx = gx_mat.into_shape_with_order((cin, hin, win)).unwrap();

    let xmat = x.to_shape((cin, hin * win)).unwrap();
    // dot yields (cout*k*k, cin); transpose to (cin, cout*k*k) and force
    // standard layout so the reshape to (cin, cout, k, k) is valid.
    let gw_mat = gcols.dot(&xmat.t());
    let gw = gw_mat
        .t()
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((cin, cout, k, k))
        .unwrap();
    (gx, gw, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array1, Array4};

    #[test]
    fn conv_out_len_matches_hand_computed_sizes() {
        assert_eq!(conv_out_len(48, 3, 2, 1), 24);
        assert_eq!(conv_out_len(24, 3, 2, 1), 12);
        assert_eq!(conv_out_len(5, 3, 1, 1), 5);
    }

    #[test]
    fn conv_transpose_doubles_spatial_size() {
        assert_eq!(conv_transpose_out_len(12, 3, 2, 1, 1), 24);
        assert_eq!(conv_transpose_out_len(24, 3, 2, 1, 1), 48);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = Array3::from_shape_fn((2, 4, 5), |(c, i, j)| (c * 100 + i * 10 + j) as f64);
        let mut w = Array4::zeros((2, 2, 3, 3));
        w[[0, 0, 1, 1]] = 1.0;
        w[[1, 1, 1, 1]] = 1.0;
        let b = Array1::zeros(2);
        let y = conv2d_forward(&x.view(), &w.view(), &b.view(), 1, 1);
        assert_eq!(y, x);
    }

    #[test]
    fn bias_only_kernel_outputs_bias() {
        let x = Array3::zeros((1, 3, 3));
        let w = Array4::zeros((2, 1, 3, 3));
        let b = arr1(&[0.5, -1.5]);
        let y = conv2d_forward(&x.view(), &w.view(), &b.view(), 1, 1);
        assert!(y.index_axis(Axis(0), 0).iter().all(|&v| v == 0.5));
        assert!(y.index_axis(Axis(0), 1).iter().all(|&v| v == -1.5));
    }

    #[test]
    fn averaging_kernel_on_constant_input_is_exact_away_from_borders() {
        let x = Array3::from_elem((1, 6, 6), 2.0);
        let w = Array4::from_elem((1, 1, 3, 3), 1.0 / 9.0);
        let b = Array1::zeros(1);
        let y = conv2d_forward(&x.view(), &w.view(), &b.view(), 1, 1);
        assert!((y[[0, 3, 3]] - 2.0).abs() < 1e-12);
        // Border taps fall on zero padding, so corners see only 4 of 9 taps.
        assert!((y[[0, 0, 0]] - 2.0 * 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)> for any c: checked with a dot
        // product against fixed pseudo-random fields.
        let x = Array3::from_shape_fn((2, 5, 4), |(c, i, j)| {
            ((c * 31 + i * 7 + j * 3) % 11) as f64 * 0.25 - 1.0
        });
        let hout = conv_out_len(5, 3, 2, 1);
        let wout = conv_out_len(4, 3, 2, 1);
        let cols = im2col(&x.view(), 3, 2, 1, hout, wout);
        let cvec = Array2::from_shape_fn(cols.dim(), |(r, l)| ((r * 13 + l * 5) % 7) as f64 - 3.0);
        let lhs: f64 = (&cols * &cvec).sum();
        let back = col2im(&cvec.view(), 2, 5, 4, 3, 2, 1, hout, wout);
        let rhs: f64 = (&x * &back).sum();
        assert!((lhs - rhs).abs() < 1e-9, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn transpose_conv_single_tap_scatters_kernel() {
        // One input pixel set to 1 must stamp the kernel into the output.
        let mut x = Array3::zeros((1, 3, 3));
        x[[0, 1, 1]] = 1.0;
        let w = Array4::from_shape_fn((1, 1, 3, 3), |(_, _, i, j)| (i * 3 + j) as f64);
        let b = Array1::zeros(1);
        let y = conv_transpose2d_forward(&x.view(), &w.view(), &b.view(), 2, 1, 1);
        assert_eq!(y.dim(), (1, 6, 6));
        // Input pixel (1,1) scatters to output rows 2*1-1+di = 1..=3.
        for di in 0..3 {
            for dj in 0..3 {
                assert_eq!(y[[0, 1 + di, 1 + dj]], (di * 3 + dj) as f64);
            }
        }
        assert_eq!(y[[0, 0, 0]], 0.0);
        assert_eq!(y[[0, 5, 5]], 0.0);
    }
}
