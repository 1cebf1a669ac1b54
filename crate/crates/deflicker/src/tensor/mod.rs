//! A small reverse-mode autodiff tape over `f64` ndarrays.
//!
//! Every operation appends a node holding its eagerly computed value; calling
//! [`Tape::backward`] on a scalar node walks the tape in reverse and returns
//! one gradient slot per node. The op set is exactly what the transformation
//! network and its losses need: elementwise arithmetic and activations,
//! channel concat/slice, strided convolutions (plain and transposed) and
//! bilinear warping that is differentiable in both the image and the flow.
//!
//! Everything runs in `f64` on a single thread, so results are bit-for-bit
//! reproducible across runs and gradients can be validated against central
//! finite differences (see [`check`]).

pub mod check;
pub mod conv;
pub mod warp;

use ndarray::{ArrayD, ArrayViewD, Axis, IxDyn};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

impl VarId {
    /// Position of the node on its tape, the index into the gradient vector
    /// returned by [`Tape::backward`].
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, f64),
    Relu(VarId),
    Sigmoid(VarId),
    Tanh(VarId),
    Abs(VarId),
    SumAll(VarId),
    /// Multiplies a `(c, h, w)` tensor by an `(h, w)` map, broadcast over
    /// channels.
    MulBcastC(VarId, VarId),
    ConcatC(Vec<VarId>),
    SliceC {
        a: VarId,
        start: usize,
        len: usize,
    },
    Conv2d {
        x: VarId,
        w: VarId,
        b: VarId,
        stride: usize,
        pad: usize,
    },
    // Output padding is only needed to compute the forward value, which the
    // builder does eagerly, so the node does not store it.
    ConvTranspose2d {
        x: VarId,
        w: VarId,
        b: VarId,
        stride: usize,
        pad: usize,
    },
    Warp {
        img: VarId,
        flow: VarId,
    },
}

struct Node {
    op: Op,
    value: ArrayD<f64>,
    requires_grad: bool,
}

/// Gradient tape. Nodes are appended in topological order, so one reverse
/// sweep suffices for backpropagation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &ArrayD<f64> {
        &self.nodes[id.0].value
    }

    /// Value of a 0-dimensional node.
    pub fn scalar(&self, id: VarId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.ndim(), 0, "scalar() called on non-scalar node");
        *v.iter().next().unwrap()
    }

    pub fn requires_grad(&self, id: VarId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: Op, value: ArrayD<f64>, requires_grad: bool) -> VarId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[VarId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ------------------------------------------------------------------
    // Node constructors
    // ------------------------------------------------------------------

    pub fn leaf(&mut self, value: ArrayD<f64>, requires_grad: bool) -> VarId {
        self.push(Op::Leaf, value, requires_grad)
    }

    /// Convenience leaf for a 0-dimensional constant.
    pub fn constant_scalar(&mut self, v: f64) -> VarId {
        self.leaf(ArrayD::from_elem(IxDyn(&[]), v), false)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let v = self.binop_value(a, b, |x, y| x + y);
        let rg = self.any_grad(&[a, b]);
        self.push(Op::Add(a, b), v, rg)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let v = self.binop_value(a, b, |x, y| x - y);
        let rg = self.any_grad(&[a, b]);
        self.push(Op::Sub(a, b), v, rg)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = self.binop_value(a, b, |x, y| x * y);
        let rg = self.any_grad(&[a, b]);
        self.push(Op::Mul(a, b), v, rg)
    }

    fn binop_value(&self, a: VarId, b: VarId, f: impl Fn(f64, f64) -> f64) -> ArrayD<f64> {
        let va = self.value(a);
        let vb = self.value(b);
        assert_eq!(
            va.shape(),
            vb.shape(),
            "elementwise op on mismatched shapes"
        );
        let mut out = va.clone();
        out.zip_mut_with(vb, |x, &y| *x = f(*x, y));
        out
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let v = self.value(a).mapv(|x| x * c);
        let rg = self.requires_grad(a);
        self.push(Op::Scale(a, c), v, rg)
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let rg = self.requires_grad(a);
        self.push(Op::Relu(a), v, rg)
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let rg = self.requires_grad(a);
        self.push(Op::Sigmoid(a), v, rg)
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        let v = self.value(a).mapv(f64::tanh);
        let rg = self.requires_grad(a);
        self.push(Op::Tanh(a), v, rg)
    }

    pub fn abs(&mut self, a: VarId) -> VarId {
        let v = self.value(a).mapv(f64::abs);
        let rg = self.requires_grad(a);
        self.push(Op::Abs(a), v, rg)
    }

    /// Sum of all elements, producing a 0-dimensional node.
    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let s = self.value(a).sum();
        let rg = self.requires_grad(a);
        self.push(Op::SumAll(a), ArrayD::from_elem(IxDyn(&[]), s), rg)
    }

    /// Mean of all elements: `sum_all` scaled by `1 / element count`.
    pub fn mean_all(&mut self, a: VarId) -> VarId {
        let n = self.value(a).len();
        assert!(n > 0, "mean of empty tensor");
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Multiplies a `(c, h, w)` node by an `(h, w)` node broadcast over the
    /// channel axis.
    pub fn mul_bcast_c(&mut self, a: VarId, m: VarId) -> VarId {
        let va = self.value(a);
        let vm = self.value(m);
        assert_eq!(va.ndim(), 3, "mul_bcast_c expects a (c, h, w) tensor");
        assert_eq!(vm.ndim(), 2, "mul_bcast_c expects an (h, w) map");
        assert_eq!(&va.shape()[1..], vm.shape(), "map shape mismatch");
        let mut out = va.clone();
        for mut plane in out.axis_iter_mut(Axis(0)) {
            plane.zip_mut_with(vm, |x, &y| *x *= y);
        }
        let rg = self.any_grad(&[a, m]);
        self.push(Op::MulBcastC(a, m), out, rg)
    }

    /// Concatenates `(c_i, h, w)` nodes along the channel axis.
    pub fn concat_c(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let views: Vec<ArrayViewD<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        for v in &views {
            assert_eq!(v.ndim(), 3, "concat_c expects (c, h, w) tensors");
            assert_eq!(&v.shape()[1..], &views[0].shape()[1..], "spatial mismatch");
        }
        let out = ndarray::concatenate(Axis(0), &views).unwrap();
        let rg = self.any_grad(parts);
        self.push(Op::ConcatC(parts.to_vec()), out, rg)
    }

    /// Selects channels `start .. start + len` of a `(c, h, w)` node.
    pub fn slice_c(&mut self, a: VarId, start: usize, len: usize) -> VarId {
        let va = self.value(a);
        assert_eq!(va.ndim(), 3, "slice_c expects a (c, h, w) tensor");
        assert!(start + len <= va.shape()[0], "channel slice out of range");
        let out = va
            .slice_axis(Axis(0), ndarray::Slice::from(start..start + len))
            .to_owned();
        let rg = self.requires_grad(a);
        self.push(Op::SliceC { a, start, len }, out, rg)
    }

    /// 2-d convolution: `x (cin, h, w)`, `w (cout, cin, k, k)`, `b (cout)`.
    pub fn conv2d(&mut self, x: VarId, w: VarId, b: VarId, stride: usize, pad: usize) -> VarId {
        let vx = self.value(x).view().into_dimensionality().unwrap();
        let vw = self.value(w).view().into_dimensionality().unwrap();
        let vb = self.value(b).view().into_dimensionality().unwrap();
        let out = conv::conv2d_forward(&vx, &vw, &vb, stride, pad);
        let rg = self.any_grad(&[x, w, b]);
        self.push(
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            out.into_dyn(),
            rg,
        )
    }

    /// Transposed 2-d convolution: `x (cin, h, w)`, `w (cin, cout, k, k)`.
    pub fn conv_transpose2d(
        &mut self,
        x: VarId,
        w: VarId,
        b: VarId,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> VarId {
        let vx = self.value(x).view().into_dimensionality().unwrap();
        let vw = self.value(w).view().into_dimensionality().unwrap();
        let vb = self.value(b).view().into_dimensionality().unwrap();
        let out = conv::conv_transpose2d_forward(&vx, &vw, &vb, stride, pad, output_pad);
        let rg = self.any_grad(&[x, w, b]);
        self.push(
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            out.into_dyn(),
            rg,
        )
    }

    /// Bilinear warp of `img (c, h, w)` by `flow (2, h, w)`, differentiable
    /// in both arguments.
    pub fn warp(&mut self, img: VarId, flow: VarId) -> VarId {
        let vi = self.value(img).view().into_dimensionality().unwrap();
        let vf = self.value(flow).view().into_dimensionality().unwrap();
        let out = warp::warp_forward(&vi, &vf);
        let rg = self.any_grad(&[img, flow]);
        self.push(Op::Warp { img, flow }, out.into_dyn(), rg)
    }

    // ------------------------------------------------------------------
    // Backward pass
    // ------------------------------------------------------------------

    /// Backpropagates from the scalar node `loss`. Returns one gradient slot
    /// per node; slots stay `None` for nodes the loss does not depend on or
    /// that do not require gradients.
    pub fn backward(&self, loss: VarId) -> Vec<Option<ArrayD<f64>>> {
        assert_eq!(self.value(loss).ndim(), 0, "backward needs a scalar loss");
        assert!(
            self.requires_grad(loss),
            "loss does not depend on any gradient leaf"
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(ArrayD::from_elem(IxDyn(&[]), 1.0));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].clone() else {
                continue;
            };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *b, g.mapv(|x| -x));
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    self.accumulate(&mut grads, *a, ga);
                    self.accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => {
                    self.accumulate(&mut grads, *a, g.mapv(|x| x * c));
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gi, &x| {
                        if x <= 0.0 {
                            *gi = 0.0;
                        }
                    });
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&self.nodes[id].value, |gi, &s| *gi *= s * (1.0 - s));
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&self.nodes[id].value, |gi, &t| *gi *= 1.0 - t * t);
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Abs(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gi, &x| *gi *= sign(x));
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let gval = *g.iter().next().unwrap();
                    let ga = ArrayD::from_elem(self.value(*a).raw_dim(), gval);
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::MulBcastC(a, m) => {
                    let vm = self.value(*m);
                    let va = self.value(*a);
                    let mut ga = g.clone();
                    for mut plane in ga.axis_iter_mut(Axis(0)) {
                        plane.zip_mut_with(vm, |x, &y| *x *= y);
                    }
                    self.accumulate(&mut grads, *a, ga);
                    let prod = &g * va;
                    let gm = prod.sum_axis(Axis(0));
                    self.accumulate(&mut grads, *m, gm);
                }
                Op::ConcatC(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.value(p).shape()[0];
                        let gp = g
                            .slice_axis(Axis(0), ndarray::Slice::from(offset..offset + c))
                            .to_owned();
                        self.accumulate(&mut grads, p, gp);
                        offset += c;
                    }
                }
                Op::SliceC { a, start, len } => {
                    let mut ga = ArrayD::zeros(self.value(*a).raw_dim());
                    ga.slice_axis_mut(Axis(0), ndarray::Slice::from(*start..*start + *len))
                        .assign(&g);
                    self.accumulate(&mut grads, *a, ga);
                }
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let vx = self.value(*x).view().into_dimensionality().unwrap();
                    let vw = self.value(*w).view().into_dimensionality().unwrap();
                    let gv = g.view().into_dimensionality().unwrap();
                    let (gx, gw, gb) = conv::conv2d_backward(&vx, &vw, &gv, *stride, *pad);
                    self.accumulate(&mut grads, *x, gx.into_dyn());
                    self.accumulate(&mut grads, *w, gw.into_dyn());
                    self.accumulate(&mut grads, *b, gb.into_dyn());
                }
                Op::ConvTranspose2d {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let vx = self.value(*x).view().into_dimensionality().unwrap();
                    let vw = self.value(*w).view().into_dimensionality().unwrap();
                    let gv = g.view().into_dimensionality().unwrap();
                    let (gx, gw, gb) =
                        conv::conv_transpose2d_backward(&vx, &vw, &gv, *stride, *pad);
                    self.accumulate(&mut grads, *x, gx.into_dyn());
                    self.accumulate(&mut grads, *w, gw.into_dyn());
                    self.accumulate(&mut grads, *b, gb.into_dyn());
                }
                Op::Warp { img, flow } => {
                    let vi = self.value(*img).view().into_dimensionality().unwrap();
                    let vf = self.value(*flow).view().into_dimensionality().unwrap();
                    let gv = g.view().into_dimensionality().unwrap();
                    let (gimg, gflow) = warp::warp_backward(&vi, &vf, &gv);
                    self.accumulate(&mut grads, *img, gimg.into_dyn());
                    self.accumulate(&mut grads, *flow, gflow.into_dyn());
                }
            }
            // Free the slot: this node's gradient has been fully consumed.
            if !matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = None;
            }
        }
        grads
    }

    fn accumulate(&self, grads: &mut [Option<ArrayD<f64>>], id: VarId, delta: ArrayD<f64>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }
}

/// Subgradient of |x| with the convention sign(0) = 0.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
