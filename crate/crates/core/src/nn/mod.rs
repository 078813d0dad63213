//! DSLCast architecture: axially-gated blocks, semi-Lagrangian advection
//! blocks, and the encoder-decoder model with a zero-gated refinement head.

mod blocks;
mod model;

pub use blocks::{agb_forward, backward_trace, dsl_block_forward, predict_flow, AgbVars, DslVars};
pub use model::{
    dslcast_forward, insert_model_params, model_forward_tensor, sinusoidal_encoding, token_latitude_features,
    BlockVars, ModelVars,
};

use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Result, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};

pub const GN_EPS: f64 = 1e-5;

/// Insert the normalized base coordinate lattice as a graph constant.
pub fn graph_base_grid<S: Scalar>(g: &mut Graph<S>, h: usize, w: usize) -> Result<Var> {
    g.constant(crate::tensor::base_grid(h, w))
}

/// Group count for GroupNorm: 8 when the width allows it, otherwise the
/// largest divisor not exceeding 8.
pub fn gn_groups(width: usize) -> usize {
    if width < 8 {
        width
    } else {
        (1..=8).rev().find(|g| width % g == 0).unwrap_or(1)
    }
}

/// Architecture hyperparameters of one DSLCast instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DslCastConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub patch_size: usize,
    /// Block width D.
    pub width: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    /// Encoder indices that are DSL-Blocks; the rest are AGBs.
    pub dsl_positions: Vec<usize>,
    /// Axial kernel length k (odd).
    pub kernel: usize,
    pub mlp_ratio: usize,
    /// Maximum displacement as a fraction of the normalized grid extent.
    pub u_max: f64,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Latitude of each grid row, degrees.
    pub latitudes_deg: Vec<f64>,
    /// When false, the longitude half of the sinusoidal encoding is zeroed
    /// (used by the longitude-equivariance tests).
    #[serde(default = "default_true")]
    pub lon_pos_encoding: bool,
}

fn default_true() -> bool {
    true
}

impl DslCastConfig {
    /// Desk-scale defaults; every-other encoder block is a DSL-Block.
    pub fn desk(in_channels: usize, out_channels: usize, grid_h: usize, grid_w: usize, latitudes_deg: Vec<f64>) -> Self {
        let encoder_depth = 4;
        Self {
            in_channels,
            out_channels,
            patch_size: 2,
            width: 32,
            encoder_depth,
            decoder_depth: 2,
            dsl_positions: (0..encoder_depth).filter(|i| i % 2 == 1).collect(),
            kernel: 7,
            mlp_ratio: 2,
            u_max: 0.1,
            grid_h,
            grid_w,
            latitudes_deg,
            lon_pos_encoding: true,
        }
    }

    pub fn token_dims(&self) -> (usize, usize) {
        (self.grid_h / self.patch_size, self.grid_w / self.patch_size)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |d: String| -> Result<()> {
            Err(TensorError::InvalidArgument {
                op: "DslCastConfig",
                detail: d,
            })
        };
        if self.grid_h % self.patch_size != 0 || self.grid_w % self.patch_size != 0 {
            return fail(format!(
                "grid {}x{} not divisible by patch size {}",
                self.grid_h, self.grid_w, self.patch_size
            ));
        }
        if self.encoder_depth == 0 || self.decoder_depth == 0 {
            return fail("encoder/decoder depth must be >= 1".into());
        }
        if self.dsl_positions.iter().any(|&p| p >= self.encoder_depth) {
            return fail("dsl_positions outside encoder".into());
        }
        if self.kernel % 2 == 0 {
            return fail("axial kernel length must be odd".into());
        }
        if !(self.u_max > 0.0 && self.u_max <= 1.0) {
            return fail(format!("u_max {} outside (0, 1]", self.u_max));
        }
        if self.latitudes_deg.len() != self.grid_h {
            return fail("latitude array length must equal grid height".into());
        }
        Ok(())
    }
}

/// Named, ordered collection of learnable parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<S> {
    entries: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<S>) {
        self.entries.push((name.into(), t));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub(crate) fn entries_iter(&self) -> std::slice::Iter<'_, (String, Tensor<S>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<S>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<S>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn total_elems(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    /// SHA-256 over the little-endian encoding of every tensor in order,
    /// used by the freeze-invariance checks.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, t) in &self.entries {
            h.update(name.as_bytes());
            for v in t.data() {
                if std::mem::size_of::<S>() == 4 {
                    h.update((v.to_f64() as f32).to_le_bytes());
                } else {
                    h.update(v.to_f64().to_le_bytes());
                }
            }
        }
        format!("{:x}", h.finalize())
    }
}

fn conv_init<S: Scalar>(shape: &[usize], rng: &mut SeedStream) -> Tensor<S> {
    let fan_in: usize = shape[1..].iter().product();
    let s = 1.0 / (fan_in as f64).sqrt();
    Tensor::random_uniform(shape, -s, s, rng)
}

fn push_agb_params<S: Scalar>(ps: &mut ParamSet<S>, prefix: &str, d: usize, k: usize, ratio: usize, rng: &mut SeedStream) {
    let hidden = d * ratio;
    ps.push(format!("{prefix}.gn1.g"), Tensor::full(&[d], S::ONE));
    ps.push(format!("{prefix}.gn1.b"), Tensor::zeros(&[d]));
    ps.push(format!("{prefix}.kh.w"), conv_init(&[d, k], rng));
    ps.push(format!("{prefix}.kh.b"), Tensor::zeros(&[d]));
    ps.push(format!("{prefix}.kv.w"), conv_init(&[d, k], rng));
    ps.push(format!("{prefix}.kv.b"), Tensor::zeros(&[d]));
    ps.push(format!("{prefix}.gate.w"), conv_init(&[d, d, 1, 1], rng));
    // Gate bias offset so gates open at sigma(-2) ~ 0.12.
    ps.push(format!("{prefix}.gate.b"), Tensor::full(&[d], S::from_f64(-2.0)));
    ps.push(format!("{prefix}.mix.w"), conv_init(&[d, d, 1, 1], rng));
    ps.push(format!("{prefix}.mix.b"), Tensor::zeros(&[d]));
    ps.push(format!("{prefix}.gn2.g"), Tensor::full(&[d], S::ONE));
    ps.push(format!("{prefix}.gn2.b"), Tensor::zeros(&[d]));
    ps.push(format!("{prefix}.mlp1.w"), conv_init(&[hidden, d, 1, 1], rng));
    ps.push(format!("{prefix}.mlp1.b"), Tensor::zeros(&[hidden]));
    ps.push(format!("{prefix}.mlp2.w"), conv_init(&[d, hidden, 1, 1], rng));
    ps.push(format!("{prefix}.mlp2.b"), Tensor::zeros(&[d]));
}

fn push_dsl_params<S: Scalar>(ps: &mut ParamSet<S>, prefix: &str, d: usize, k: usize, ratio: usize, rng: &mut SeedStream) {
    push_agb_params(ps, &format!("{prefix}.trunk"), d, k, ratio, rng);
    let hidden = d * ratio;
    ps.push(format!("{prefix}.flow.w"), conv_init(&[2, d, 3, 3], rng));
    ps.push(format!("{prefix}.flow.b"), Tensor::zeros(&[2]));
    ps.push(format!("{prefix}.wgate.w"), conv_init(&[d, d, 1, 1], rng));
    ps.push(format!("{prefix}.wgate.b"), Tensor::full(&[d], S::from_f64(-2.0)));
    ps.push(format!("{prefix}.wmix.w"), conv_init(&[d, d, 1, 1], rng));
    ps.push(format!("{prefix}.wmix.b"), Tensor::zeros(&[d]));
    ps.push(format!("{prefix}.wgn2.g"), Tensor::full(&[d], S::ONE));
    ps.push(format!("{prefix}.wgn2.b"), Tensor::zeros(&[d]));
    ps.push(format!("{prefix}.wmlp1.w"), conv_init(&[hidden, d, 1, 1], rng));
    ps.push(format!("{prefix}.wmlp1.b"), Tensor::zeros(&[hidden]));
    ps.push(format!("{prefix}.wmlp2.w"), conv_init(&[d, hidden, 1, 1], rng));
    ps.push(format!("{prefix}.wmlp2.b"), Tensor::zeros(&[d]));
}

/// Initialize the full parameter set for one DSLCast instance.
///
/// Fan-in-scaled uniform for convolutions, -2.0 bias on gate-producing
/// convolutions, zero-initialized refinement gate.
pub fn init_params<S: Scalar>(cfg: &DslCastConfig, seed: u64) -> Result<ParamSet<S>> {
    cfg.validate()?;
    let mut rng = SeedStream::new(seed).derive("model-init");
    let mut ps = ParamSet::new();
    let d = cfg.width;
    let p = cfg.patch_size;
    ps.push("embed.w", conv_init(&[d, cfg.in_channels, p, p], &mut rng));
    ps.push("embed.b", Tensor::zeros(&[d]));
    ps.push("lat.w", conv_init(&[d, 2, 1, 1], &mut rng));
    ps.push("lat.b", Tensor::zeros(&[d]));
    for i in 0..cfg.encoder_depth {
        let prefix = format!("enc{i}");
        if cfg.dsl_positions.contains(&i) {
            push_dsl_params(&mut ps, &prefix, d, cfg.kernel, cfg.mlp_ratio, &mut rng);
        } else {
            push_agb_params(&mut ps, &prefix, d, cfg.kernel, cfg.mlp_ratio, &mut rng);
        }
    }
    for j in 0..cfg.decoder_depth {
        push_agb_params(&mut ps, &format!("dec{j}"), d, cfg.kernel, cfg.mlp_ratio, &mut rng);
    }
    ps.push("unembed.w", conv_init(&[d, cfg.out_channels, p, p], &mut rng));
    ps.push("unembed.b", Tensor::zeros(&[cfg.out_channels]));
    let rh = (cfg.width / 2).max(1);
    ps.push(
        "refine.conv1.w",
        conv_init(&[rh, cfg.out_channels + cfg.in_channels, 3, 3], &mut rng),
    );
    ps.push("refine.conv1.b", Tensor::zeros(&[rh]));
    ps.push("refine.conv2.w", conv_init(&[cfg.out_channels, rh, 3, 3], &mut rng));
    ps.push("refine.conv2.b", Tensor::zeros(&[cfg.out_channels]));
    ps.push("refine.gate", Tensor::zeros(&[cfg.out_channels]));
    Ok(ps)
}
