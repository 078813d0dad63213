//! Tape-based reverse-mode automatic differentiation over [`Tensor`].
//!
//! A [`Graph`] records one forward pass; `backward` consumes it and fills
//! gradients for every leaf that requires them. Nodes are appended in
//! topological order, so the reverse sweep is a simple reverse iteration.

use super::kernels::{self, ConvAxis};
use super::{Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// Boundary handling for 2-D convolutions.
///
/// `Sphere` wraps the width axis (longitude) circularly and replicates the
/// height axis (latitude) border, matching the lat-lon topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    /// No padding (valid convolution).
    None,
    /// Same-padding with zeros.
    Zero,
    /// Same-padding: circular in width, replicate in height.
    Sphere,
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Sqrt(Var),
    Sum(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: PadMode,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
    },
    DepthwiseAxial {
        x: Var,
        w: Var,
        b: Var,
        axis: ConvAxis,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
    },
    Warp {
        field: Var,
        grid: Var,
    },
    ConcatC(Var, Var),
    SliceC {
        x: Var,
        start: usize,
        len: usize,
    },
    ScaleChannels {
        x: Var,
        gains: Var,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor<S>>,
    /// Per-group (mean, inv_std) saved by group_norm for its backward.
    gn_stats: Option<Vec<(f64, f64)>>,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    consumed: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, value: Tensor<S>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
            gn_stats: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, value: Tensor<S>, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        value.check_finite(name)?;
        Ok(self.push(value, op, requires_grad))
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Result<Var> {
        value.check_finite("leaf")?;
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    /// Leaf insertion without the finiteness scan, for values the caller
    /// already vouches for (model parameters pass through the optimizer's
    /// gradient checks; any non-finite value would still surface at the
    /// first op consuming it).
    pub fn leaf_trusted(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ------------------------------------------------------------------
    // Elementwise ops (equal shapes, or one operand a scalar)
    // ------------------------------------------------------------------

    fn binary_value(&self, a: Var, b: Var, op: &'static str, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(ta.shape().to_vec(), data)
        } else if tb.is_scalar() {
            let y = tb.item();
            Ok(ta.map(|x| f(x, y)))
        } else if ta.is_scalar() {
            let x = ta.item();
            Ok(tb.map(|y| f(x, y)))
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            })
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary_value(a, b, "add", |x, y| x + y)?;
        self.push_checked(v, Op::Add(a, b), self.needs(&[a, b]), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary_value(a, b, "sub", |x, y| x - y)?;
        self.push_checked(v, Op::Sub(a, b), self.needs(&[a, b]), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary_value(a, b, "mul", |x, y| x * y)?;
        self.push_checked(v, Op::Mul(a, b), self.needs(&[a, b]), "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary_value(a, b, "div", |x, y| x / y)?;
        self.push_checked(v, Op::Div(a, b), self.needs(&[a, b]), "div")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let cs = S::from_f64(c);
        let v = self.nodes[a.0].value.map(|x| x * cs);
        self.push_checked(v, Op::Scale(a, c), self.needs(&[a]), "scale")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.nodes[a.0].value.map(|x| {
            // Numerically stable logistic in both tails.
            if x.to_f64() >= 0.0 {
                S::ONE / (S::ONE + (-x).exp_val())
            } else {
                let e = x.exp_val();
                e / (S::ONE + e)
            }
        });
        self.push_checked(v, Op::Sigmoid(a), self.needs(&[a]), "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.nodes[a.0].value.map(|x| x.tanh_val());
        self.push_checked(v, Op::Tanh(a), self.needs(&[a]), "tanh")
    }

    /// Exact Gaussian-CDF gelu: x * Phi(x).
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let v = self.nodes[a.0].value.map(|x| x * x.norm_cdf());
        self.push_checked(v, Op::Gelu(a), self.needs(&[a]), "gelu")
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let v = self.nodes[a.0].value.map(|x| x.sqrt_val());
        self.push_checked(v, Op::Sqrt(a), self.needs(&[a]), "sqrt")
    }

    /// Sum of all elements, a [1]-shaped tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let mut acc = S::ZERO;
        for v in self.nodes[a.0].value.data() {
            acc += *v;
        }
        self.push_checked(Tensor::scalar(acc), Op::Sum(a), self.needs(&[a]), "sum")
    }

    // ------------------------------------------------------------------
    // Structured ops
    // ------------------------------------------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: PadMode) -> Result<Var> {
        let (c_in, h, width) = self.nodes[x.0].value.dims3()?;
        let ws = self.nodes[w.0].value.shape().to_vec();
        if ws.len() != 4 || ws[1] != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!("weight {:?} vs input channels {}", ws, c_in),
            });
        }
        let (c_out, kh, kw) = (ws[0], ws[2], ws[3]);
        if pad != PadMode::None && (kh % 2 == 0 || kw % 2 == 0) {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                detail: format!("same-padding requires odd kernel, got {}x{}", kh, kw),
            });
        }
        if kh > h + 2 * ((kh - 1) / 2) || kw > width + 2 * ((kw - 1) / 2) {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!("kernel {}x{} larger than padded input", kh, kw),
            });
        }
        if let Some(b) = b {
            if self.nodes[b.0].value.shape() != [c_out] {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d",
                    detail: format!("bias {:?} vs c_out {}", self.nodes[b.0].value.shape(), c_out),
                });
            }
        }
        let (h_out, w_out, _, _) = kernels::conv2d_out_dims(h, width, kh, kw, stride, pad);
        let mut out = Tensor::zeros(&[c_out, h_out, w_out]);
        kernels::conv2d_fwd(
            self.nodes[x.0].value.data(),
            self.nodes[w.0].value.data(),
            b.map(|b| self.nodes[b.0].value.data()),
            c_in,
            h,
            width,
            c_out,
            kh,
            kw,
            stride,
            pad,
            out.data_mut(),
        );
        let req = self.needs(&[x, w]) || b.map_or(false, |b| self.needs(&[b]));
        self.push_checked(out, Op::Conv2d { x, w, b, stride, pad }, req, "conv2d")
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        let (c_in, h, width) = self.nodes[x.0].value.dims3()?;
        let ws = self.nodes[w.0].value.shape().to_vec();
        if ws.len() != 4 || ws[0] != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv_transpose2d",
                detail: format!("weight {:?} vs input channels {}", ws, c_in),
            });
        }
        let (c_out, kh, kw) = (ws[1], ws[2], ws[3]);
        let h_out = (h - 1) * stride + kh;
        let w_out = (width - 1) * stride + kw;
        let mut out = Tensor::zeros(&[c_out, h_out, w_out]);
        kernels::conv_transpose2d_fwd(
            self.nodes[x.0].value.data(),
            self.nodes[w.0].value.data(),
            b.map(|b| self.nodes[b.0].value.data()),
            c_in,
            h,
            width,
            c_out,
            kh,
            kw,
            stride,
            out.data_mut(),
        );
        let req = self.needs(&[x, w]) || b.map_or(false, |b| self.needs(&[b]));
        self.push_checked(out, Op::ConvTranspose2d { x, w, b, stride }, req, "conv_transpose2d")
    }

    pub fn depthwise_axial(&mut self, x: Var, w: Var, b: Var, axis: ConvAxis) -> Result<Var> {
        let (c, h, width) = self.nodes[x.0].value.dims3()?;
        let ws = self.nodes[w.0].value.shape().to_vec();
        if ws.len() != 2 || ws[0] != c {
            return Err(TensorError::ShapeMismatch {
                op: "depthwise_axial",
                detail: format!("kernels {:?} vs channels {}", ws, c),
            });
        }
        let k = ws[1];
        if k % 2 == 0 {
            return Err(TensorError::InvalidArgument {
                op: "depthwise_axial",
                detail: format!("kernel length must be odd, got {}", k),
            });
        }
        if self.nodes[b.0].value.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "depthwise_axial",
                detail: "bias/channel mismatch".into(),
            });
        }
        let mut out = Tensor::zeros(&[c, h, width]);
        kernels::depthwise_axial_fwd(
            self.nodes[x.0].value.data(),
            self.nodes[w.0].value.data(),
            self.nodes[b.0].value.data(),
            c,
            h,
            width,
            k,
            axis,
            out.data_mut(),
        );
        let req = self.needs(&[x, w, b]);
        self.push_checked(out, Op::DepthwiseAxial { x, w, b, axis }, req, "depthwise_axial")
    }

    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Result<Var> {
        let (c, h, width) = self.nodes[x.0].value.dims3()?;
        if groups == 0 || c % groups != 0 {
            return Err(TensorError::InvalidArgument {
                op: "group_norm",
                detail: format!("channels {} not divisible by groups {}", c, groups),
            });
        }
        if eps <= 0.0 {
            return Err(TensorError::InvalidArgument {
                op: "group_norm",
                detail: "eps must be positive".into(),
            });
        }
        if self.nodes[gamma.0].value.shape() != [c] || self.nodes[beta.0].value.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "group_norm",
                detail: "affine params must have shape [C]".into(),
            });
        }
        let mut out = Tensor::zeros(&[c, h, width]);
        let stats = kernels::group_norm_fwd(
            self.nodes[x.0].value.data(),
            self.nodes[gamma.0].value.data(),
            self.nodes[beta.0].value.data(),
            c,
            h,
            width,
            groups,
            eps,
            out.data_mut(),
        );
        let req = self.needs(&[x, gamma, beta]);
        let v = self.push_checked(out, Op::GroupNorm { x, gamma, beta, groups }, req, "group_norm")?;
        self.nodes[v.0].gn_stats = Some(stats);
        Ok(v)
    }

    pub fn bilinear_warp(&mut self, field: Var, grid: Var) -> Result<Var> {
        let (c, h, w) = self.nodes[field.0].value.dims3()?;
        if self.nodes[grid.0].value.shape() != [2, h, w] {
            return Err(TensorError::ShapeMismatch {
                op: "bilinear_warp",
                detail: format!("grid {:?}, expected [2,{},{}]", self.nodes[grid.0].value.shape(), h, w),
            });
        }
        let mut out = Tensor::zeros(&[c, h, w]);
        kernels::bilinear_warp_fwd(
            self.nodes[field.0].value.data(),
            self.nodes[grid.0].value.data(),
            c,
            h,
            w,
            out.data_mut(),
        );
        let req = self.needs(&[field, grid]);
        self.push_checked(out, Op::Warp { field, grid }, req, "bilinear_warp")
    }

    pub fn concat_c(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, h, w) = self.nodes[a.0].value.dims3()?;
        let (cb, hb, wb) = self.nodes[b.0].value.dims3()?;
        if (h, w) != (hb, wb) {
            return Err(TensorError::ShapeMismatch {
                op: "concat_c",
                detail: format!("{}x{} vs {}x{}", h, w, hb, wb),
            });
        }
        let mut data = Vec::with_capacity((ca + cb) * h * w);
        data.extend_from_slice(self.nodes[a.0].value.data());
        data.extend_from_slice(self.nodes[b.0].value.data());
        let out = Tensor::new(vec![ca + cb, h, w], data)?;
        self.push_checked(out, Op::ConcatC(a, b), self.needs(&[a, b]), "concat_c")
    }

    pub fn slice_c(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (c, h, w) = self.nodes[x.0].value.dims3()?;
        if start + len > c {
            return Err(TensorError::ShapeMismatch {
                op: "slice_c",
                detail: format!("slice {}..{} of {} channels", start, start + len, c),
            });
        }
        let plane = h * w;
        let data = self.nodes[x.0].value.data()[start * plane..(start + len) * plane].to_vec();
        let out = Tensor::new(vec![len, h, w], data)?;
        self.push_checked(out, Op::SliceC { x, start, len }, self.needs(&[x]), "slice_c")
    }

    /// Multiply each channel plane of x [C,H,W] by the per-channel gain g[C].
    pub fn scale_channels(&mut self, x: Var, gains: Var) -> Result<Var> {
        let (c, h, w) = self.nodes[x.0].value.dims3()?;
        if self.nodes[gains.0].value.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "scale_channels",
                detail: "gains must have shape [C]".into(),
            });
        }
        let plane = h * w;
        let mut out = Tensor::zeros(&[c, h, w]);
        for ch in 0..c {
            let gv = self.nodes[gains.0].value.data()[ch];
            let xs = &self.nodes[x.0].value.data()[ch * plane..(ch + 1) * plane];
            let os = &mut out.data_mut()[ch * plane..(ch + 1) * plane];
            for (o, v) in os.iter_mut().zip(xs.iter()) {
                *o = gv * *v;
            }
        }
        let req = self.needs(&[x, gains]);
        self.push_checked(out, Op::ScaleChannels { x, gains }, req, "scale_channels")
    }

    // ------------------------------------------------------------------
    // Backward
    // ------------------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss. Consumes the graph: a second
    /// call fails rather than producing stale gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(TensorError::GraphConsumed);
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(TensorError::NonScalarLoss(self.nodes[loss.0].value.shape().to_vec()));
        }
        self.consumed = true;
        for node in &mut self.nodes {
            if node.requires_grad {
                node.grad = Some(Tensor::zeros(node.value.shape()));
            }
        }
        if !self.nodes[loss.0].requires_grad {
            // Loss does not depend on any grad-requiring leaf; nothing to do.
            return Ok(());
        }
        self.nodes[loss.0].grad.as_mut().unwrap().data_mut()[0] = S::ONE;

        for id in (0..self.nodes.len()).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let op = self.nodes[id].op.clone();
            if matches!(op, Op::Leaf) {
                continue;
            }
            let g = self.nodes[id].grad.clone().unwrap();
            let updates = self.input_grads(id, &op, &g);
            for (var, grad) in updates {
                if let Some(slot) = self.nodes[var.0].grad.as_mut() {
                    let dst = slot.data_mut();
                    for (d, s) in dst.iter_mut().zip(grad.data()) {
                        *d += *s;
                    }
                }
            }
        }
        Ok(())
    }

    /// Sum-reduce `g` if the target operand was a broadcast scalar.
    fn reduce_to(&self, target: Var, g: &Tensor<S>) -> Tensor<S> {
        let tshape = self.nodes[target.0].value.shape();
        if tshape == g.shape() {
            g.clone()
        } else {
            let mut acc = S::ZERO;
            for v in g.data() {
                acc += *v;
            }
            Tensor::new(tshape.to_vec(), vec![acc]).unwrap()
        }
    }

    fn input_grads(&self, id: usize, op: &Op, g: &Tensor<S>) -> Vec<(Var, Tensor<S>)> {
        let mut out: Vec<(Var, Tensor<S>)> = Vec::new();
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(a) {
                    out.push((*a, self.reduce_to(*a, g)));
                }
                if needs(b) {
                    out.push((*b, self.reduce_to(*b, g)));
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    out.push((*a, self.reduce_to(*a, g)));
                }
                if needs(b) {
                    let neg = g.map(|x| -x);
                    out.push((*b, self.reduce_to(*b, &neg)));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if needs(a) {
                    let da = elementwise_with(g, tb, |gv, y| gv * y);
                    out.push((*a, self.reduce_to(*a, &da)));
                }
                if needs(b) {
                    let db = elementwise_with(g, ta, |gv, x| gv * x);
                    out.push((*b, self.reduce_to(*b, &db)));
                }
            }
            Op::Div(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                if needs(a) {
                    let da = elementwise_with(g, tb, |gv, y| gv / y);
                    out.push((*a, self.reduce_to(*a, &da)));
                }
                if needs(b) {
                    // d/db (a/b) = -a / b^2
                    let num = elementwise_with(g, ta, |gv, x| gv * x);
                    let db = elementwise_with(&num, tb, |gv, y| -(gv / (y * y)));
                    out.push((*b, self.reduce_to(*b, &db)));
                }
            }
            Op::Scale(a, c) => {
                if needs(a) {
                    let cs = S::from_f64(*c);
                    out.push((*a, g.map(|x| x * cs)));
                }
            }
            Op::Sigmoid(a) => {
                if needs(a) {
                    let y = &self.nodes[id].value;
                    let da = zip3(g, y, |gv, yv| gv * yv * (S::ONE - yv));
                    out.push((*a, da));
                }
            }
            Op::Tanh(a) => {
                if needs(a) {
                    let y = &self.nodes[id].value;
                    let da = zip3(g, y, |gv, yv| gv * (S::ONE - yv * yv));
                    out.push((*a, da));
                }
            }
            Op::Gelu(a) => {
                if needs(a) {
                    let x = &self.nodes[a.0].value;
                    let da = zip3(g, x, |gv, xv| gv * (xv.norm_cdf() + xv * xv.norm_pdf()));
                    out.push((*a, da));
                }
            }
            Op::Sqrt(a) => {
                if needs(a) {
                    let y = &self.nodes[id].value;
                    // Subgradient convention: zero at y == 0.
                    let half = S::from_f64(0.5);
                    let da = zip3(g, y, |gv, yv| {
                        if yv == S::ZERO {
                            S::ZERO
                        } else {
                            gv * half / yv
                        }
                    });
                    out.push((*a, da));
                }
            }
            Op::Sum(a) => {
                if needs(a) {
                    let gv = g.item();
                    out.push((*a, Tensor::full(self.nodes[a.0].value.shape(), gv)));
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                let b = *b;
                let (c_in, h, width) = self.nodes[x.0].value.dims3().unwrap();
                let ws = self.nodes[w.0].value.shape();
                let (c_out, kh, kw) = (ws[0], ws[2], ws[3]);
                let mut dx = needs(x).then(|| Tensor::zeros(self.nodes[x.0].value.shape()));
                let mut dw = needs(w).then(|| Tensor::zeros(ws));
                let mut db = b.filter(|b| needs(b)).map(|b| Tensor::zeros(self.nodes[b.0].value.shape()));
                kernels::conv2d_bwd(
                    self.nodes[x.0].value.data(),
                    self.nodes[w.0].value.data(),
                    g.data(),
                    c_in,
                    h,
                    width,
                    c_out,
                    kh,
                    kw,
                    *stride,
                    *pad,
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                );
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                if let Some(dw) = dw {
                    out.push((*w, dw));
                }
                if let (Some(b), Some(db)) = (b, db) {
                    out.push((b, db));
                }
            }
            Op::ConvTranspose2d { x, w, b, stride } => {
                let b = *b;
                let (c_in, h, width) = self.nodes[x.0].value.dims3().unwrap();
                let ws = self.nodes[w.0].value.shape();
                let (c_out, kh, kw) = (ws[1], ws[2], ws[3]);
                let mut dx = needs(x).then(|| Tensor::zeros(self.nodes[x.0].value.shape()));
                let mut dw = needs(w).then(|| Tensor::zeros(ws));
                let mut db = b.filter(|b| needs(b)).map(|b| Tensor::zeros(self.nodes[b.0].value.shape()));
                kernels::conv_transpose2d_bwd(
                    self.nodes[x.0].value.data(),
                    self.nodes[w.0].value.data(),
                    g.data(),
                    c_in,
                    h,
                    width,
                    c_out,
                    kh,
                    kw,
                    *stride,
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                );
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                if let Some(dw) = dw {
                    out.push((*w, dw));
                }
                if let (Some(b), Some(db)) = (b, db) {
                    out.push((b, db));
                }
            }
            Op::DepthwiseAxial { x, w, b, axis } => {
                let (c, h, width) = self.nodes[x.0].value.dims3().unwrap();
                let k = self.nodes[w.0].value.shape()[1];
                let mut dx = needs(x).then(|| Tensor::zeros(self.nodes[x.0].value.shape()));
                let mut dw = needs(w).then(|| Tensor::zeros(self.nodes[w.0].value.shape()));
                let mut db = needs(b).then(|| Tensor::zeros(self.nodes[b.0].value.shape()));
                kernels::depthwise_axial_bwd(
                    self.nodes[x.0].value.data(),
                    self.nodes[w.0].value.data(),
                    g.data(),
                    c,
                    h,
                    width,
                    k,
                    *axis,
                    dx.as_mut().map(|t| t.data_mut()),
                    dw.as_mut().map(|t| t.data_mut()),
                    db.as_mut().map(|t| t.data_mut()),
                );
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                if let Some(dw) = dw {
                    out.push((*w, dw));
                }
                if let Some(db) = db {
                    out.push((*b, db));
                }
            }
            Op::GroupNorm { x, gamma, beta, groups } => {
                let (c, h, width) = self.nodes[x.0].value.dims3().unwrap();
                let stats = self.nodes[id].gn_stats.as_ref().unwrap();
                let mut dx = needs(x).then(|| Tensor::zeros(self.nodes[x.0].value.shape()));
                let mut dgamma = needs(gamma).then(|| Tensor::zeros(self.nodes[gamma.0].value.shape()));
                let mut dbeta = needs(beta).then(|| Tensor::zeros(self.nodes[beta.0].value.shape()));
                kernels::group_norm_bwd(
                    self.nodes[x.0].value.data(),
                    self.nodes[gamma.0].value.data(),
                    g.data(),
                    c,
                    h,
                    width,
                    *groups,
                    stats,
                    dx.as_mut().map(|t| t.data_mut()),
                    dgamma.as_mut().map(|t| t.data_mut()),
                    dbeta.as_mut().map(|t| t.data_mut()),
                );
                if let Some(dx) = dx {
                    out.push((*x, dx));
                }
                if let Some(dg) = dgamma {
                    out.push((*gamma, dg));
                }
                if let Some(db) = dbeta {
                    out.push((*beta, db));
                }
            }
            Op::Warp { field, grid } => {
                let (c, h, w) = self.nodes[field.0].value.dims3().unwrap();
                let mut dfield = needs(field).then(|| Tensor::zeros(self.nodes[field.0].value.shape()));
                let mut dgrid = needs(grid).then(|| Tensor::zeros(self.nodes[grid.0].value.shape()));
                kernels::bilinear_warp_bwd(
                    self.nodes[field.0].value.data(),
                    self.nodes[grid.0].value.data(),
                    g.data(),
                    c,
                    h,
                    w,
                    dfield.as_mut().map(|t| t.data_mut()),
                    dgrid.as_mut().map(|t| t.data_mut()),
                );
                if let Some(df) = dfield {
                    out.push((*field, df));
                }
                if let Some(dg) = dgrid {
                    out.push((*grid, dg));
                }
            }
            Op::ConcatC(a, b) => {
                let ca = self.nodes[a.0].value.shape()[0];
                let (ct, h, w) = self.nodes[id].value.dims3().unwrap();
                let plane = h * w;
                if needs(a) {
                    let da = Tensor::new(
                        self.nodes[a.0].value.shape().to_vec(),
                        g.data()[..ca * plane].to_vec(),
                    )
                    .unwrap();
                    out.push((*a, da));
                }
                if needs(b) {
                    let db = Tensor::new(
                        self.nodes[b.0].value.shape().to_vec(),
                        g.data()[ca * plane..ct * plane].to_vec(),
                    )
                    .unwrap();
                    out.push((*b, db));
                }
            }
            Op::SliceC { x, start, len } => {
                if needs(x) {
                    let (_, h, w) = self.nodes[x.0].value.dims3().unwrap();
                    let plane = h * w;
                    let mut dx = Tensor::zeros(self.nodes[x.0].value.shape());
                    dx.data_mut()[start * plane..(start + len) * plane].copy_from_slice(g.data());
                    out.push((*x, dx));
                }
            }
            Op::ScaleChannels { x, gains } => {
                let (c, h, w) = self.nodes[x.0].value.dims3().unwrap();
                let plane = h * w;
                if needs(x) {
                    let mut dx = Tensor::zeros(self.nodes[x.0].value.shape());
                    for ch in 0..c {
                        let gv = self.nodes[gains.0].value.data()[ch];
                        let gs = &g.data()[ch * plane..(ch + 1) * plane];
                        let ds = &mut dx.data_mut()[ch * plane..(ch + 1) * plane];
                        for (d, s) in ds.iter_mut().zip(gs.iter()) {
                            *d = gv * *s;
                        }
                    }
                    out.push((*x, dx));
                }
                if needs(gains) {
                    let mut dg = Tensor::zeros(&[c]);
                    for ch in 0..c {
                        let xs = &self.nodes[x.0].value.data()[ch * plane..(ch + 1) * plane];
                        let gs = &g.data()[ch * plane..(ch + 1) * plane];
                        let mut acc = S::ZERO;
                        for (gv, xv) in gs.iter().zip(xs.iter()) {
                            acc += *gv * *xv;
                        }
                        dg.data_mut()[ch] = acc;
                    }
                    out.push((*gains, dg));
                }
            }
        }
        out
    }

    /// Gradient of a node after backward. Errors for nodes that do not
    /// require grad (in particular frozen engine parameters).
    pub fn grad(&self, v: Var) -> Result<&Tensor<S>> {
        self.nodes[v.0].grad.as_ref().ok_or(TensorError::NoGradient)
    }

    pub fn take_grad(&mut self, v: Var) -> Result<Tensor<S>> {
        self.nodes[v.0].grad.take().ok_or(TensorError::NoGradient)
    }
}

/// Elementwise combine where `other` may be a broadcast scalar.
fn elementwise_with<S: Scalar>(g: &Tensor<S>, other: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    if other.is_scalar() && g.numel() != 1 {
        let y = other.item();
        g.map(|x| f(x, y))
    } else if g.is_scalar() && other.numel() != 1 {
        // Scalar output against tensor operand (e.g. scalar = a / b with
        // tensor b never happens, but scalar loss ops keep this sound).
        let x = g.item();
        other.map(|y| f(x, y))
    } else {
        let data = g.data().iter().zip(other.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(g.shape().to_vec(), data).unwrap()
    }
}

fn zip3<S: Scalar>(g: &Tensor<S>, y: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    let data = g.data().iter().zip(y.data()).map(|(&gv, &yv)| f(gv, yv)).collect();
    Tensor::new(g.shape().to_vec(), data).unwrap()
}

/// Normalized base coordinate lattice [2,h,w] spanning [-1,1] per axis:
/// channel 0 varies along width, channel 1 along height.
pub fn base_grid<S: Scalar>(h: usize, w: usize) -> Tensor<S> {
    let mut t = Tensor::zeros(&[2, h, w]);
    let plane = h * w;
    for i in 0..h {
        for j in 0..w {
            let x = if w > 1 { -1.0 + 2.0 * j as f64 / (w as f64 - 1.0) } else { 0.0 };
            let y = if h > 1 { -1.0 + 2.0 * i as f64 / (h as f64 - 1.0) } else { 0.0 };
            t.data_mut()[i * w + j] = S::from_f64(x);
            t.data_mut()[plane + i * w + j] = S::from_f64(y);
        }
    }
    t
}
