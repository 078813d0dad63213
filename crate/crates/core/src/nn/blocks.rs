//! The two block types: the Axially-Gated Block and the Differentiable
//! Semi-Lagrangian advection block.
//!
//! Both reduce exactly to the identity map when all learnable parameters
//! are zero: the gated residual branch is multiplied by a zeroed mixing
//! convolution and the channel MLP output is zero.

use crate::scalar::Scalar;
use crate::tensor::{Graph, PadMode, Result, TensorError, Var};

use super::graph_base_grid;

/// Parameter handles of one AGB inside a graph.
#[derive(Clone, Copy, Debug)]
pub struct AgbVars {
    pub gn1_g: Var,
    pub gn1_b: Var,
    pub kh_w: Var,
    pub kh_b: Var,
    pub kv_w: Var,
    pub kv_b: Var,
    pub gate_w: Var,
    pub gate_b: Var,
    pub mix_w: Var,
    pub mix_b: Var,
    pub gn2_g: Var,
    pub gn2_b: Var,
    pub mlp1_w: Var,
    pub mlp1_b: Var,
    pub mlp2_w: Var,
    pub mlp2_b: Var,
}

/// Parameter handles of one DSL-Block.
#[derive(Clone, Copy, Debug)]
pub struct DslVars {
    pub trunk: AgbVars,
    pub flow_w: Var,
    pub flow_b: Var,
    pub wgate_w: Var,
    pub wgate_b: Var,
    pub wmix_w: Var,
    pub wmix_b: Var,
    pub gn2_g: Var,
    pub gn2_b: Var,
    pub mlp1_w: Var,
    pub mlp1_b: Var,
    pub mlp2_w: Var,
    pub mlp2_b: Var,
}

fn conv1x1<S: Scalar>(g: &mut Graph<S>, x: Var, w: Var, b: Var) -> Result<Var> {
    g.conv2d(x, w, Some(b), 1, PadMode::Sphere)
}

fn channel_mlp<S: Scalar>(g: &mut Graph<S>, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let h = conv1x1(g, x, w1, b1)?;
    let h = g.gelu(h)?;
    conv1x1(g, h, w2, b2)
}

/// Axially-Gated Block forward:
///   U       = GN(F_in)
///   F_axial = C_dw_1xk(U) + C_dw_kx1(U)
///   G       = sigmoid(C_g(U))
///   F_res   = F_in + G (.) C_mix(F_axial)
///   F_out   = F_res + MLP_C(GN(F_res))
pub fn agb_forward<S: Scalar>(g: &mut Graph<S>, x: Var, p: &AgbVars, groups: usize, eps: f64) -> Result<Var> {
    let u = g.group_norm(x, p.gn1_g, p.gn1_b, groups, eps)?;
    let ah = g.depthwise_axial(u, p.kh_w, p.kh_b, crate::tensor::ConvAxis::Width)?;
    let av = g.depthwise_axial(u, p.kv_w, p.kv_b, crate::tensor::ConvAxis::Height)?;
    let axial = g.add(ah, av)?;
    let gate_pre = conv1x1(g, u, p.gate_w, p.gate_b)?;
    let gate = g.sigmoid(gate_pre)?;
    let mixed = conv1x1(g, axial, p.mix_w, p.mix_b)?;
    let gated = g.mul(gate, mixed)?;
    let res = g.add(x, gated)?;
    let normed = g.group_norm(res, p.gn2_g, p.gn2_b, groups, eps)?;
    let mlp = channel_mlp(g, normed, p.mlp1_w, p.mlp1_b, p.mlp2_w, p.mlp2_b)?;
    g.add(res, mlp)
}

/// Displacement flow u = u_max * tanh(C_flow(F_feat)), shape [2,h,w].
///
/// The tanh output is scaled by u_max*(1 - 1e-9) so every component stays
/// strictly inside (-u_max, u_max) even when tanh saturates to exactly 1.0
/// in floating point.
pub fn predict_flow<S: Scalar>(g: &mut Graph<S>, feat: Var, flow_w: Var, flow_b: Var, u_max: f64) -> Result<Var> {
    let pre = g.conv2d(feat, flow_w, Some(flow_b), 1, PadMode::Sphere)?;
    if g.value(pre).shape()[0] != 2 {
        return Err(TensorError::ShapeMismatch {
            op: "predict_flow",
            detail: format!("flow conv must emit 2 channels, got {}", g.value(pre).shape()[0]),
        });
    }
    let t = g.tanh(pre)?;
    let u = g.scale(t, u_max * (1.0 - 1e-9))?;
    debug_assert!(g.value(u).max_abs() < u_max);
    Ok(u)
}

/// Backward tracing: sampling grid = base grid - flow, componentwise.
pub fn backward_trace<S: Scalar>(g: &mut Graph<S>, base_grid: Var, u: Var) -> Result<Var> {
    g.sub(base_grid, u)
}

/// DSL-Block forward:
///   F_feat   = AGB_trunk(F_in)
///   u        = u_max * tanh(C_flow(F_feat))
///   G_sample = G_base - u
///   F_warped = Warp(F_feat, G_sample)
///   G_w      = sigmoid(C_gw(F_feat))
///   F_res    = F_in + G_w (.) C_mixw(F_warped)
///   F_out    = F_res + MLP_C(GN(F_res))
pub fn dsl_block_forward<S: Scalar>(g: &mut Graph<S>, x: Var, p: &DslVars, u_max: f64, groups: usize, eps: f64) -> Result<Var> {
    let feat = agb_forward(g, x, &p.trunk, groups, eps)?;
    let (_, h, w) = g.value(feat).dims3()?;
    let u = predict_flow(g, feat, p.flow_w, p.flow_b, u_max)?;
    let base = graph_base_grid(g, h, w)?;
    let sample = backward_trace(g, base, u)?;
    let warped = g.bilinear_warp(feat, sample)?;
    let gate_pre = conv1x1(g, feat, p.wgate_w, p.wgate_b)?;
    let gate = g.sigmoid(gate_pre)?;
    let mixed = conv1x1(g, warped, p.wmix_w, p.wmix_b)?;
    let gated = g.mul(gate, mixed)?;
    let res = g.add(x, gated)?;
    let normed = g.group_norm(res, p.gn2_g, p.gn2_b, groups, eps)?;
    let mlp = channel_mlp(g, normed, p.mlp1_w, p.mlp1_b, p.mlp2_w, p.mlp2_b)?;
    g.add(res, mlp)
}
