//! The full DSLCast model: patchify embedding, positional encodings,
//! encoder/decoder with additive skip connections, transposed-conv
//! upsampling, and the zero-gated refinement head.

use crate::scalar::Scalar;
use crate::tensor::{Graph, PadMode, Result, Tensor, TensorError, Var};

use super::blocks::{agb_forward, dsl_block_forward, AgbVars, DslVars};
use super::{gn_groups, DslCastConfig, ParamSet, GN_EPS};

#[derive(Clone, Copy, Debug)]
pub enum BlockVars {
    Agb(AgbVars),
    Dsl(DslVars),
}

/// Parameter handles of one model instance inside a graph.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub embed_w: Var,
    pub embed_b: Var,
    pub lat_w: Var,
    pub lat_b: Var,
    pub encoder: Vec<BlockVars>,
    pub decoder: Vec<AgbVars>,
    pub unembed_w: Var,
    pub unembed_b: Var,
    pub refine1_w: Var,
    pub refine1_b: Var,
    pub refine2_w: Var,
    pub refine2_b: Var,
    pub refine_gate: Var,
}

struct Cursor<'a, 'g, S: Scalar> {
    graph: &'g mut Graph<S>,
    entries: std::slice::Iter<'a, (String, Tensor<S>)>,
    requires_grad: bool,
}

impl<S: Scalar> Cursor<'_, '_, S> {
    fn next(&mut self, expect: &str) -> Result<Var> {
        let (name, t) = self.entries.next().ok_or_else(|| TensorError::InvalidArgument {
            op: "insert_model_params",
            detail: format!("parameter set exhausted, expected `{expect}`"),
        })?;
        if name != expect {
            return Err(TensorError::InvalidArgument {
                op: "insert_model_params",
                detail: format!("parameter order mismatch: expected `{expect}`, found `{name}`"),
            });
        }
        Ok(self.graph.leaf_trusted(t.clone(), self.requires_grad))
    }

    fn agb(&mut self, prefix: &str) -> Result<AgbVars> {
        Ok(AgbVars {
            gn1_g: self.next(&format!("{prefix}.gn1.g"))?,
            gn1_b: self.next(&format!("{prefix}.gn1.b"))?,
            kh_w: self.next(&format!("{prefix}.kh.w"))?,
            kh_b: self.next(&format!("{prefix}.kh.b"))?,
            kv_w: self.next(&format!("{prefix}.kv.w"))?,
            kv_b: self.next(&format!("{prefix}.kv.b"))?,
            gate_w: self.next(&format!("{prefix}.gate.w"))?,
            gate_b: self.next(&format!("{prefix}.gate.b"))?,
            mix_w: self.next(&format!("{prefix}.mix.w"))?,
            mix_b: self.next(&format!("{prefix}.mix.b"))?,
            gn2_g: self.next(&format!("{prefix}.gn2.g"))?,
            gn2_b: self.next(&format!("{prefix}.gn2.b"))?,
            mlp1_w: self.next(&format!("{prefix}.mlp1.w"))?,
            mlp1_b: self.next(&format!("{prefix}.mlp1.b"))?,
            mlp2_w: self.next(&format!("{prefix}.mlp2.w"))?,
            mlp2_b: self.next(&format!("{prefix}.mlp2.b"))?,
        })
    }

    fn dsl(&mut self, prefix: &str) -> Result<DslVars> {
        Ok(DslVars {
            trunk: self.agb(&format!("{prefix}.trunk"))?,
            flow_w: self.next(&format!("{prefix}.flow.w"))?,
            flow_b: self.next(&format!("{prefix}.flow.b"))?,
            wgate_w: self.next(&format!("{prefix}.wgate.w"))?,
            wgate_b: self.next(&format!("{prefix}.wgate.b"))?,
            wmix_w: self.next(&format!("{prefix}.wmix.w"))?,
            wmix_b: self.next(&format!("{prefix}.wmix.b"))?,
            gn2_g: self.next(&format!("{prefix}.wgn2.g"))?,
            gn2_b: self.next(&format!("{prefix}.wgn2.b"))?,
            mlp1_w: self.next(&format!("{prefix}.wmlp1.w"))?,
            mlp1_b: self.next(&format!("{prefix}.wmlp1.b"))?,
            mlp2_w: self.next(&format!("{prefix}.wmlp2.w"))?,
            mlp2_b: self.next(&format!("{prefix}.wmlp2.b"))?,
        })
    }
}

/// Insert every parameter of `params` (in its declared order) as graph
/// leaves and return structured handles. Frozen engines insert with
/// `requires_grad = false`, so requesting their gradients is a hard error.
pub fn insert_model_params<S: Scalar>(
    g: &mut Graph<S>,
    cfg: &DslCastConfig,
    params: &ParamSet<S>,
    requires_grad: bool,
) -> Result<ModelVars> {
    let mut cur = Cursor {
        graph: g,
        entries: params.entries_iter(),
        requires_grad,
    };
    let embed_w = cur.next("embed.w")?;
    let embed_b = cur.next("embed.b")?;
    let lat_w = cur.next("lat.w")?;
    let lat_b = cur.next("lat.b")?;
    let mut encoder = Vec::with_capacity(cfg.encoder_depth);
    for i in 0..cfg.encoder_depth {
        let prefix = format!("enc{i}");
        if cfg.dsl_positions.contains(&i) {
            encoder.push(BlockVars::Dsl(cur.dsl(&prefix)?));
        } else {
            encoder.push(BlockVars::Agb(cur.agb(&prefix)?));
        }
    }
    let mut decoder = Vec::with_capacity(cfg.decoder_depth);
    for j in 0..cfg.decoder_depth {
        decoder.push(cur.agb(&format!("dec{j}"))?);
    }
    let unembed_w = cur.next("unembed.w")?;
    let unembed_b = cur.next("unembed.b")?;
    let refine1_w = cur.next("refine.conv1.w")?;
    let refine1_b = cur.next("refine.conv1.b")?;
    let refine2_w = cur.next("refine.conv2.w")?;
    let refine2_b = cur.next("refine.conv2.b")?;
    let refine_gate = cur.next("refine.gate")?;
    Ok(ModelVars {
        embed_w,
        embed_b,
        lat_w,
        lat_b,
        encoder,
        decoder,
        unembed_w,
        unembed_b,
        refine1_w,
        refine1_b,
        refine2_w,
        refine2_b,
        refine_gate,
    })
}

/// Fixed sinusoidal positional encoding over the token grid: half the
/// channels encode the row index, half the column index, alternating
/// sin/cos. The column half is zeroed when `lon` is false.
pub fn sinusoidal_encoding<S: Scalar>(d: usize, h: usize, w: usize, lon: bool) -> Tensor<S> {
    let half = d / 2;
    let mut t = Tensor::zeros(&[d, h, w]);
    let plane = h * w;
    let enc = |m: usize, idx: usize, half_d: usize| -> f64 {
        let pair = (m / 2) as f64;
        let denom = 10000f64.powf(2.0 * pair / half_d.max(1) as f64);
        let arg = idx as f64 / denom;
        if m % 2 == 0 {
            arg.sin()
        } else {
            arg.cos()
        }
    };
    for c in 0..half {
        for i in 0..h {
            let v = S::from_f64(enc(c, i, half));
            for j in 0..w {
                t.data_mut()[c * plane + i * w + j] = v;
            }
        }
    }
    if lon {
        for c in half..d {
            for j in 0..w {
                let v = S::from_f64(enc(c - half, j, d - half));
                for i in 0..h {
                    t.data_mut()[c * plane + i * w + j] = v;
                }
            }
        }
    }
    t
}

/// [2,h,w] feature map of (sin lat, cos lat) per token row, constant along
/// longitude. Token latitude is the mean of its patch rows.
pub fn token_latitude_features<S: Scalar>(cfg: &DslCastConfig) -> Tensor<S> {
    let (h, w) = cfg.token_dims();
    let p = cfg.patch_size;
    let mut t = Tensor::zeros(&[2, h, w]);
    let plane = h * w;
    for i in 0..h {
        let lat: f64 = (0..p).map(|r| cfg.latitudes_deg[i * p + r]).sum::<f64>() / p as f64;
        let rad = lat.to_radians();
        for j in 0..w {
            t.data_mut()[i * w + j] = S::from_f64(rad.sin());
            t.data_mut()[plane + i * w + j] = S::from_f64(rad.cos());
        }
    }
    t
}

/// Full model forward pass on one sample [C_in, H, W] -> [C_out, H, W].
pub fn dslcast_forward<S: Scalar>(g: &mut Graph<S>, cfg: &DslCastConfig, vars: &ModelVars, x: Var) -> Result<Var> {
    let (c, h, w) = g.value(x).dims3()?;
    if c != cfg.in_channels || h != cfg.grid_h || w != cfg.grid_w {
        return Err(TensorError::ShapeMismatch {
            op: "dslcast_forward",
            detail: format!(
                "input [{},{},{}] vs config [{},{},{}]",
                c, h, w, cfg.in_channels, cfg.grid_h, cfg.grid_w
            ),
        });
    }
    let (th, tw) = cfg.token_dims();
    let groups = gn_groups(cfg.width);

    // Patchify + positional encodings.
    let mut z = g.conv2d(x, vars.embed_w, Some(vars.embed_b), cfg.patch_size, PadMode::None)?;
    let pos = g.constant(sinusoidal_encoding(cfg.width, th, tw, cfg.lon_pos_encoding))?;
    z = g.add(z, pos)?;
    let lat_in = g.constant(token_latitude_features(cfg))?;
    let lat_e = g.conv2d(lat_in, vars.lat_w, Some(vars.lat_b), 1, PadMode::Sphere)?;
    z = g.add(z, lat_e)?;

    // Encoder, remembering per-depth outputs for the skip connections.
    let mut enc_outputs = Vec::with_capacity(cfg.encoder_depth);
    for block in &vars.encoder {
        z = match block {
            BlockVars::Agb(p) => agb_forward(g, z, p, groups, GN_EPS)?,
            BlockVars::Dsl(p) => dsl_block_forward(g, z, p, cfg.u_max, groups, GN_EPS)?,
        };
        enc_outputs.push(z);
    }

    // Decoder with additive skips from depth-matched encoder outputs:
    // decoder block j pairs with encoder block N-2-j (walking back from
    // just below the bottleneck).
    for (j, p) in vars.decoder.iter().enumerate() {
        let skip_idx = cfg.encoder_depth as isize - 2 - j as isize;
        if skip_idx >= 0 {
            z = g.add(z, enc_outputs[skip_idx as usize])?;
        }
        z = agb_forward(g, z, p, groups, GN_EPS)?;
    }

    // Upsample back to the full grid.
    let y = g.conv_transpose2d(z, vars.unembed_w, Some(vars.unembed_b), cfg.patch_size)?;

    // Refinement: residual correction from concat(y, x) through a
    // zero-initialized per-channel gate.
    let cat = g.concat_c(y, x)?;
    let r = g.conv2d(cat, vars.refine1_w, Some(vars.refine1_b), 1, PadMode::Sphere)?;
    let r = g.gelu(r)?;
    let r = g.conv2d(r, vars.refine2_w, Some(vars.refine2_b), 1, PadMode::Sphere)?;
    let gated = g.scale_channels(r, vars.refine_gate)?;
    g.add(y, gated)
}

/// Forward pass without gradient tracking, returning a plain tensor.
pub fn model_forward_tensor<S: Scalar>(cfg: &DslCastConfig, params: &ParamSet<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let vars = insert_model_params(&mut g, cfg, params, false)?;
    let xv = g.constant(x.clone())?;
    let out = dslcast_forward(&mut g, cfg, &vars, xv)?;
    Ok(g.value(out).clone())
}
