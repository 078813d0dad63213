//! Dense tensors and reverse-mode automatic differentiation.

mod graph;
mod kernels;

pub use graph::{base_grid, Graph, PadMode, Var};
pub use kernels::ConvAxis;

use crate::scalar::Scalar;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite values produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("compute graph already consumed by backward")]
    GraphConsumed,
    #[error("gradient requested for a node that does not require grad")]
    NoGradient,
    #[error("gradient check: op `{0}` is not registered")]
    UnknownOp(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense multi-dimensional array in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "Tensor::new",
                detail: format!("shape {:?} holds {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![S::ZERO; numel],
        }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: S) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(|i| f(i)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn item(&self) -> S {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite_val())
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    /// Euclidean norm of the flattened data, accumulated in f64.
    pub fn norm_l2(&self) -> f64 {
        self.data
            .iter()
            .map(|x| {
                let v = x.to_f64();
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .map(|x| x.to_f64().abs())
            .fold(0.0, f64::max)
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| T::from_f64(x.to_f64())).collect(),
        }
    }

    /// Extents of a [C, H, W] tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        if self.shape.len() != 3 {
            return Err(TensorError::ShapeMismatch {
                op: "dims3",
                detail: format!("expected rank 3, got {:?}", self.shape),
            });
        }
        Ok((self.shape[0], self.shape[1], self.shape[2]))
    }

    pub fn at3(&self, c: usize, i: usize, j: usize) -> S {
        let (_, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(c * h + i) * w + j]
    }

    pub fn random_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut crate::rng::SeedStream) -> Self {
        Self::from_fn(shape, |_| S::from_f64(rng.uniform_in(lo, hi)))
    }

    pub fn random_normal(shape: &[usize], std: f64, rng: &mut crate::rng::SeedStream) -> Self {
        Self::from_fn(shape, |_| S::from_f64(std * rng.normal()))
    }
}

/// Stack [C,H,W] tensors along the channel axis (value level).
pub fn concat_channels<S: Scalar>(parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let (_, h, w) = parts
        .first()
        .ok_or_else(|| TensorError::InvalidArgument {
            op: "concat_channels",
            detail: "no parts".into(),
        })?
        .dims3()?;
    let mut data = Vec::new();
    let mut c_total = 0;
    for p in parts {
        let (pc, ph, pw) = p.dims3()?;
        if (ph, pw) != (h, w) {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                detail: format!("spatial dims {}x{} vs {}x{}", ph, pw, h, w),
            });
        }
        c_total += pc;
        data.extend_from_slice(p.data());
    }
    Tensor::new(vec![c_total, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    fn graph64() -> Graph<f64> {
        Graph::new()
    }

    /// Direct nested-loop cross-correlation with zero padding, the
    /// independent oracle for conv2d.
    fn conv_oracle(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        b: &[f64],
        stride: usize,
        same: bool,
        circular_lon: bool,
    ) -> Tensor<f64> {
        let (c_in, h, width) = x.dims3().unwrap();
        let ws = w.shape();
        let (c_out, kh, kw) = (ws[0], ws[2], ws[3]);
        let (ph, pw) = if same { ((kh - 1) / 2, (kw - 1) / 2) } else { (0, 0) };
        let h_out = (h + 2 * ph - kh) / stride + 1;
        let w_out = (width + 2 * pw - kw) / stride + 1;
        let mut out = Tensor::zeros(&[c_out, h_out, w_out]);
        for co in 0..c_out {
            for oi in 0..h_out {
                for oj in 0..w_out {
                    let mut acc = b[co];
                    for ci in 0..c_in {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ii = oi as isize * stride as isize + ki as isize - ph as isize;
                                let jj = oj as isize * stride as isize + kj as isize - pw as isize;
                                let xv = if same && circular_lon {
                                    let ii = ii.clamp(0, h as isize - 1) as usize;
                                    let jj = jj.rem_euclid(width as isize) as usize;
                                    x.at3(ci, ii, jj)
                                } else if ii < 0 || jj < 0 || ii >= h as isize || jj >= width as isize {
                                    0.0
                                } else {
                                    x.at3(ci, ii as usize, jj as usize)
                                };
                                acc += xv * w.data()[((co * c_in + ci) * kh + ki) * kw + kj];
                            }
                        }
                    }
                    out.data_mut()[(co * h_out + oi) * w_out + oj] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut g = graph64();
        let mut rng = SeedStream::new(7);
        let x = Tensor::random_uniform(&[3, 4, 5], -1.0, 1.0, &mut rng);
        let xv = g.constant(x.clone()).unwrap();
        // 1x1 delta kernel with identity channel map.
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let wv = g.constant(w).unwrap();
        let out = g.conv2d(xv, wv, None, 1, PadMode::Zero).unwrap();
        assert_eq!(g.value(out).data(), x.data());
    }

    #[test]
    fn conv2d_matches_nested_loop_oracle() {
        let mut rng = SeedStream::new(11);
        let x = Tensor::random_uniform(&[1, 4, 4], -1.0, 1.0, &mut rng);
        let w = Tensor::new(
            vec![1, 1, 3, 3],
            vec![0.5, -1.0, 0.25, 2.0, 0.0, -0.5, 1.0, 1.5, -0.25],
        )
        .unwrap();
        let expect = conv_oracle(&x, &w, &[0.0], 1, true, false);
        let mut g = graph64();
        let xv = g.constant(x).unwrap();
        let wv = g.constant(w).unwrap();
        let out = g.conv2d(xv, wv, None, 1, PadMode::Zero).unwrap();
        for (a, e) in g.value(out).data().iter().zip(expect.data()) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn conv2d_sphere_matches_oracle_and_wraps() {
        let mut rng = SeedStream::new(13);
        let x = Tensor::random_uniform(&[2, 5, 6], -1.0, 1.0, &mut rng);
        let w = Tensor::random_uniform(&[2, 2, 3, 3], -1.0, 1.0, &mut rng);
        let b = vec![0.1, -0.2];
        let expect = conv_oracle(&x, &w, &b, 1, true, true);
        let mut g = graph64();
        let xv = g.constant(x.clone()).unwrap();
        let wv = g.constant(w.clone()).unwrap();
        let bv = g.constant(Tensor::new(vec![2], b.clone()).unwrap()).unwrap();
        let out = g.conv2d(xv, wv, Some(bv), 1, PadMode::Sphere).unwrap();
        for (a, e) in g.value(out).data().iter().zip(expect.data()) {
            assert!((a - e).abs() < 1e-12);
        }

        // Perturbation probe: column 0 output must feel column W-1 input.
        let mut x2 = x.clone();
        let (c, h, width) = x2.dims3().unwrap();
        for ci in 0..c {
            for i in 0..h {
                x2.data_mut()[(ci * h + i) * width + (width - 1)] += 1.0;
            }
        }
        let mut g2 = graph64();
        let xv2 = g2.constant(x2).unwrap();
        let wv2 = g2.constant(w).unwrap();
        let bv2 = g2.constant(Tensor::new(vec![2], b).unwrap()).unwrap();
        let out2 = g2.conv2d(xv2, wv2, Some(bv2), 1, PadMode::Sphere).unwrap();
        let col0_before: Vec<f64> = (0..h).map(|i| g.value(out).at3(0, i, 0)).collect();
        let col0_after: Vec<f64> = (0..h).map(|i| g2.value(out2).at3(0, i, 0)).collect();
        assert!(col0_before.iter().zip(&col0_after).any(|(a, b)| (a - b).abs() > 1e-9));
    }

    #[test]
    fn circular_conv_commutes_with_longitude_rotation() {
        let mut rng = SeedStream::new(17);
        let x = Tensor::random_uniform(&[2, 4, 6], -1.0, 1.0, &mut rng);
        let w = Tensor::random_uniform(&[2, 2, 3, 3], -1.0, 1.0, &mut rng);
        let rot = |t: &Tensor<f64>, j: usize| -> Tensor<f64> {
            let (c, h, width) = t.dims3().unwrap();
            Tensor::from_fn(&[c, h, width], |idx| {
                let jj = idx % width;
                let rest = idx / width;
                t.data()[rest * width + (jj + width - j) % width]
            })
        };
        let run = |inp: Tensor<f64>| -> Tensor<f64> {
            let mut g = graph64();
            let xv = g.constant(inp).unwrap();
            let wv = g.constant(w.clone()).unwrap();
            let out = g.conv2d(xv, wv, None, 1, PadMode::Sphere).unwrap();
            g.value(out).clone()
        };
        let y = run(x.clone());
        let y_rot = run(rot(&x, 2));
        assert_eq!(rot(&y, 2).data(), y_rot.data());
    }

    #[test]
    fn depthwise_axial_delta_and_moving_average() {
        let mut rng = SeedStream::new(19);
        let x = Tensor::random_uniform(&[2, 3, 5], -1.0, 1.0, &mut rng);
        let mut g = graph64();
        let xv = g.constant(x.clone()).unwrap();
        let delta = g
            .constant(Tensor::new(vec![2, 3], vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0]).unwrap())
            .unwrap();
        let zb = g.constant(Tensor::zeros(&[2])).unwrap();
        let out = g.depthwise_axial(xv, delta, zb, ConvAxis::Width).unwrap();
        assert_eq!(g.value(out).data(), x.data());

        // [1,1,1]/3 along width == 3-point circular moving average per row.
        let third = 1.0 / 3.0;
        let mut g = graph64();
        let xv = g.constant(x.clone()).unwrap();
        let avg = g
            .constant(Tensor::new(vec![2, 3], vec![third; 6]).unwrap())
            .unwrap();
        let zb = g.constant(Tensor::zeros(&[2])).unwrap();
        let out = g.depthwise_axial(xv, avg, zb, ConvAxis::Width).unwrap();
        let (c, h, width) = x.dims3().unwrap();
        for ci in 0..c {
            for i in 0..h {
                for j in 0..width {
                    let expect = third
                        * (x.at3(ci, i, (j + width - 1) % width)
                            + x.at3(ci, i, j)
                            + x.at3(ci, i, (j + 1) % width));
                    let got = g.value(out).at3(ci, i, j);
                    assert!((got - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn depthwise_axial_height_constant_field_fixed_point() {
        // A field constant along height is unchanged by any normalized
        // kernel along that axis.
        let x = Tensor::from_fn(&[1, 4, 3], |i| (i % 3) as f64);
        let kernel = Tensor::new(vec![1, 3], vec![0.25, 0.5, 0.25]).unwrap();
        let mut g = graph64();
        let xv = g.constant(x.clone()).unwrap();
        let kv = g.constant(kernel).unwrap();
        let zb = g.constant(Tensor::zeros(&[1])).unwrap();
        let out = g.depthwise_axial(xv, kv, zb, ConvAxis::Height).unwrap();
        for (a, e) in g.value(out).data().iter().zip(x.data()) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn depthwise_axial_rejects_even_kernel() {
        let mut g = graph64();
        let xv = g.constant(Tensor::zeros(&[1, 3, 3])).unwrap();
        let kv = g.constant(Tensor::zeros(&[1, 4])).unwrap();
        let bv = g.constant(Tensor::zeros(&[1])).unwrap();
        assert!(g.depthwise_axial(xv, kv, bv, ConvAxis::Width).is_err());
    }

    #[test]
    fn group_norm_constant_input_and_affine_collapse() {
        let mut g = graph64();
        let xv = g.constant(Tensor::full(&[4, 2, 2], 3.5)).unwrap();
        let gamma = g.constant(Tensor::full(&[4], 1.0)).unwrap();
        let beta = g.constant(Tensor::zeros(&[4])).unwrap();
        let out = g.group_norm(xv, gamma, beta, 2, 1e-5).unwrap();
        for v in g.value(out).data() {
            assert!(v.abs() < 1e-9);
        }

        let mut g = graph64();
        let mut rng = SeedStream::new(23);
        let xv = g
            .constant(Tensor::random_uniform(&[4, 2, 2], -1.0, 1.0, &mut rng))
            .unwrap();
        let gamma = g.constant(Tensor::zeros(&[4])).unwrap();
        let beta = g.constant(Tensor::full(&[4], 0.7)).unwrap();
        let out = g.group_norm(xv, gamma, beta, 2, 1e-5).unwrap();
        for v in g.value(out).data() {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn group_norm_matches_two_pass_oracle() {
        let mut rng = SeedStream::new(29);
        let x = Tensor::random_uniform(&[4, 3, 3], -2.0, 2.0, &mut rng);
        let gamma = Tensor::random_uniform(&[4], 0.5, 1.5, &mut rng);
        let beta = Tensor::random_uniform(&[4], -0.5, 0.5, &mut rng);
        let groups = 2;
        let eps = 1e-5;
        let mut g = graph64();
        let xv = g.constant(x.clone()).unwrap();
        let gv = g.constant(gamma.clone()).unwrap();
        let bv = g.constant(beta.clone()).unwrap();
        let out = g.group_norm(xv, gv, bv, groups, eps).unwrap();

        let cg = 4 / groups;
        let plane = 9;
        for grp in 0..groups {
            let lo = grp * cg * plane;
            let hi = (grp + 1) * cg * plane;
            let m = (hi - lo) as f64;
            let mean: f64 = x.data()[lo..hi].iter().sum::<f64>() / m;
            let var: f64 = x.data()[lo..hi].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            let inv = 1.0 / (var + eps).sqrt();
            for cc in 0..cg {
                let ch = grp * cg + cc;
                for p in 0..plane {
                    let expect = (x.data()[ch * plane + p] - mean) * inv * gamma.data()[ch] + beta.data()[ch];
                    let got = g.value(out).data()[ch * plane + p];
                    assert!((got - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn group_norm_rejects_indivisible_groups() {
        let mut g = graph64();
        let xv = g.constant(Tensor::zeros(&[5, 2, 2])).unwrap();
        let gv = g.constant(Tensor::full(&[5], 1.0)).unwrap();
        let bv = g.constant(Tensor::zeros(&[5])).unwrap();
        assert!(g.group_norm(xv, gv, bv, 2, 1e-5).is_err());
    }

    #[test]
    fn elementwise_known_values() {
        let mut g = graph64();
        let x = g.constant(Tensor::scalar(0.0)).unwrap();
        let s = g.sigmoid(x).unwrap();
        assert_eq!(g.value(s).item(), 0.5);

        let x = g.constant(Tensor::scalar(20.0)).unwrap();
        let t = g.tanh(x).unwrap();
        assert!((g.value(t).item() - 1.0).abs() < 1e-8);

        // gelu(1) = 1 * Phi(1), Phi from an arbitrary-precision table.
        let x = g.constant(Tensor::scalar(1.0)).unwrap();
        let ge = g.gelu(x).unwrap();
        assert!((g.value(ge).item() - 0.841344746068543).abs() < 1e-12);
    }

    #[test]
    fn elementwise_rejects_incompatible_shapes() {
        let mut g = graph64();
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[3, 2])).unwrap();
        assert!(g.add(a, b).is_err());
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let mut rng = SeedStream::new(31);
        let x = Tensor::random_uniform(&[3, 2, 2], -1.0, 1.0, &mut rng);

        let mut g = graph64();
        let xv = g.leaf(x.clone(), true).unwrap();
        let s = g.sum(xv).unwrap();
        g.backward(s).unwrap();
        for v in g.grad(xv).unwrap().data() {
            assert_eq!(*v, 1.0);
        }

        let mut g = graph64();
        let xv = g.leaf(x.clone(), true).unwrap();
        let sq = g.mul(xv, xv).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        for (gv, xv) in g.grad(xv).unwrap().data().iter().zip(x.data()) {
            assert!((gv - 2.0 * xv).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_requires_scalar_loss_and_consumes_graph() {
        let mut g = graph64();
        let xv = g.leaf(Tensor::zeros(&[2, 2]), true).unwrap();
        assert!(matches!(g.backward(xv), Err(TensorError::NonScalarLoss(_))));

        let mut g = graph64();
        let xv = g.leaf(Tensor::full(&[2], 1.0), true).unwrap();
        let s = g.sum(xv).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(TensorError::GraphConsumed)));
    }

    #[test]
    fn frozen_leaf_gradient_is_hard_error() {
        let mut g = graph64();
        let frozen = g.leaf(Tensor::full(&[2], 1.0), false).unwrap();
        let live = g.leaf(Tensor::full(&[2], 2.0), true).unwrap();
        let y = g.mul(frozen, live).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.grad(frozen), Err(TensorError::NoGradient)));
        assert!(g.grad(live).is_ok());
    }

    #[test]
    fn warp_identity_is_bit_exact() {
        let mut rng = SeedStream::new(37);
        let f = Tensor::random_uniform(&[3, 6, 9], -1.0, 1.0, &mut rng);
        let mut g = graph64();
        let fv = g.constant(f.clone()).unwrap();
        let base = g.constant(base_grid(6, 9)).unwrap();
        let out = g.bilinear_warp(fv, base).unwrap();
        assert_eq!(g.value(out).data(), f.data());
    }

    #[test]
    fn warp_integer_shift_matches_index_remap() {
        let mut rng = SeedStream::new(41);
        let (h, w) = (5, 8);
        let f = Tensor::random_uniform(&[2, h, w], -1.0, 1.0, &mut rng);
        // Shift sample points one cell left in x: u = (2/(w-1), 0) subtracted
        // from the base grid per backward tracing.
        let step = 2.0 / (w as f64 - 1.0);
        let base = base_grid::<f64>(h, w);
        let grid = Tensor::from_fn(&[2, h, w], |i| {
            if i < h * w {
                base.data()[i] - step
            } else {
                base.data()[i]
            }
        });
        let mut g = graph64();
        let fv = g.constant(f.clone()).unwrap();
        let gv = g.constant(grid).unwrap();
        let out = g.bilinear_warp(fv, gv).unwrap();
        for c in 0..2 {
            for i in 0..h {
                for j in 0..w {
                    let expect = f.at3(c, i, (j + w - 1) % w);
                    let got = g.value(out).at3(c, i, j);
                    assert!((got - expect).abs() < 1e-9, "c{c} i{i} j{j}: {got} vs {expect}");
                }
            }
        }
    }

    #[test]
    fn warp_half_cell_shift_averages_neighbours() {
        let (h, w) = (4, 7);
        // Linear ramp along x so midpoint sampling is exactly the average.
        let f = Tensor::from_fn(&[1, h, w], |i| (i % w) as f64);
        let half = 1.0 / (w as f64 - 1.0);
        let base = base_grid::<f64>(h, w);
        let grid = Tensor::from_fn(&[2, h, w], |i| {
            if i < h * w {
                base.data()[i] - half
            } else {
                base.data()[i]
            }
        });
        let mut g = graph64();
        let fv = g.constant(f.clone()).unwrap();
        let gv = g.constant(grid).unwrap();
        let out = g.bilinear_warp(fv, gv).unwrap();
        for i in 0..h {
            for j in 1..w {
                let expect = 0.5 * (f.at3(0, i, j - 1) + f.at3(0, i, j));
                let got = g.value(out).at3(0, i, j);
                assert!((got - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn forward_determinism_bit_identical() {
        let run = || {
            let mut rng = SeedStream::new(43);
            let x = Tensor::<f32>::random_uniform(&[3, 6, 6], -1.0, 1.0, &mut rng);
            let w = Tensor::<f32>::random_uniform(&[3, 3, 3, 3], -1.0, 1.0, &mut rng);
            let mut g: Graph<f32> = Graph::new();
            let xv = g.constant(x).unwrap();
            let wv = g.constant(w).unwrap();
            let c = g.conv2d(xv, wv, None, 1, PadMode::Sphere).unwrap();
            let t = g.tanh(c).unwrap();
            g.value(t).data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn nonfinite_forward_is_error() {
        let mut g = graph64();
        let a = g.constant(Tensor::scalar(1.0)).unwrap();
        let b = g.constant(Tensor::scalar(0.0)).unwrap();
        assert!(matches!(g.div(a, b), Err(TensorError::NonFinite { .. })));
        assert!(g.leaf(Tensor::scalar(f64::NAN), false).is_err());
    }
}
