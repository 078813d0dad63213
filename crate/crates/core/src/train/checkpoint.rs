//! Checkpoint persistence: a JSON manifest plus a little-endian f32 blob
//! with parameters serialized in manifest order.
//!
//! Files come in pairs `<base>.json` / `<base>.bin`; the pipeline names
//! them `<run>/<engine>.{best,final}.{json,bin}`.

use super::pretrain::EpochStats;
use super::{Result, TrainError};
use crate::nn::{DslCastConfig, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ParamTableEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub engine: String,
    pub model: DslCastConfig,
    pub epoch: usize,
    pub seed: u64,
    pub loss_history: Vec<EpochStats>,
    pub params: Vec<ParamTableEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub params: ParamSet<f32>,
}

impl Checkpoint {
    pub fn new<S: Scalar>(
        engine: &str,
        model: &DslCastConfig,
        epoch: usize,
        seed: u64,
        loss_history: Vec<EpochStats>,
        params: &ParamSet<S>,
    ) -> Self {
        let params: ParamSet<f32> = params.cast();
        let table = params
            .iter()
            .map(|(n, t)| ParamTableEntry {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect();
        Self {
            manifest: CheckpointManifest {
                version: CHECKPOINT_VERSION,
                engine: engine.to_string(),
                model: model.clone(),
                epoch,
                seed,
                loss_history,
                params: table,
            },
            params,
        }
    }

    pub fn digest(&self) -> String {
        self.params.digest()
    }
}

fn blob_bytes(params: &ParamSet<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.total_elems() * 4);
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Write `<base>.json` and `<base>.bin`.
pub fn save_checkpoint(ckpt: &Checkpoint, base: &Path) -> Result<()> {
    if let Some(dir) = base.parent() {
        fs::create_dir_all(dir)?;
    }
    let json = serde_json::to_vec_pretty(&ckpt.manifest).map_err(|e| TrainError::Format(e.to_string()))?;
    let mut f = fs::File::create(base.with_extension("json"))?;
    f.write_all(&json)?;
    let mut f = fs::File::create(base.with_extension("bin"))?;
    f.write_all(&blob_bytes(&ckpt.params))?;
    Ok(())
}

/// Read a checkpoint pair, validating the manifest against the blob.
pub fn load_checkpoint(base: &Path) -> Result<Checkpoint> {
    let json = fs::read(base.with_extension("json"))?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(&json).map_err(|e| TrainError::Format(format!("manifest parse: {e}")))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(TrainError::Format(format!(
            "version mismatch: file has {}, tool supports {}",
            manifest.version, CHECKPOINT_VERSION
        )));
    }
    let mut blob = Vec::new();
    fs::File::open(base.with_extension("bin"))?.read_to_end(&mut blob)?;
    let expected: usize = manifest.params.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if blob.len() != expected * 4 {
        // Identify the first parameter whose data runs past the blob end.
        let mut offset = 0usize;
        for e in &manifest.params {
            let n: usize = e.shape.iter().product();
            if (offset + n) * 4 > blob.len() {
                return Err(TrainError::Format(format!(
                    "blob length {} does not match manifest ({} values expected); truncated at parameter `{}`",
                    blob.len(),
                    expected,
                    e.name
                )));
            }
            offset += n;
        }
        return Err(TrainError::Format(format!(
            "blob length {} exceeds manifest size {}",
            blob.len(),
            expected * 4
        )));
    }
    let mut params = ParamSet::new();
    let mut offset = 0usize;
    for e in &manifest.params {
        let n: usize = e.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let b = &blob[(offset + i) * 4..(offset + i + 1) * 4];
            data.push(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        }
        offset += n;
        params.push(
            e.name.clone(),
            Tensor::new(e.shape.clone(), data).map_err(|err| TrainError::Format(err.to_string()))?,
        );
    }
    Ok(Checkpoint { manifest, params })
}
