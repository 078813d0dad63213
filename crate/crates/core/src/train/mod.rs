//! Losses, optimizer, learning-rate schedule, Stage-1 pretraining, and
//! checkpoint persistence.

mod adam;
mod checkpoint;
mod pretrain;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, ParamTableEntry};
pub use pretrain::{pretrain_engine, EngineDataset, EpochStats, PretrainOutcome};

use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("zero-norm target in relative loss (degenerate batch)")]
    DegenerateTarget,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: training diverged")]
    DivergentLoss { epoch: usize, batch: usize },
    #[error("non-finite gradient for parameter `{0}`; optimizer step rejected")]
    BadGradient(String),
    #[error("epoch {epoch} outside schedule range 0..={total}")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Which norm the training loss uses. The prose calls the loss "relative"
/// while the equations write a plain L2 norm; relative is the default and
/// plain remains selectable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Relative,
    Plain,
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Relative
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub lr0: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Validate every this many epochs (always validates on the last).
    pub val_every: usize,
    #[serde(default)]
    pub loss: LossKind,
}

impl TrainSchedule {
    pub fn new(epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            lr0: 1e-3,
            batch_size: 8,
            seed,
            val_every: 1,
            loss: LossKind::Relative,
        }
    }
}

/// Cosine annealing: lr0 * (1 + cos(pi * epoch / total)) / 2, decreasing
/// from lr0 at epoch 0 to exactly 0 at epoch == total.
pub fn cosine_anneal_lr(epoch: usize, total_epochs: usize, lr0: f64) -> Result<f64> {
    if epoch > total_epochs {
        return Err(TrainError::EpochOutOfRange {
            epoch,
            total: total_epochs,
        });
    }
    if total_epochs == 0 {
        return Ok(lr0);
    }
    let phase = std::f64::consts::PI * epoch as f64 / total_epochs as f64;
    Ok(lr0 * (1.0 + phase.cos()) / 2.0)
}

/// ||pred - target||_2 / ||target||_2 as a graph node (target constant).
pub fn relative_l2_graph<S: Scalar>(g: &mut Graph<S>, pred: Var, target: &Tensor<S>) -> Result<Var> {
    if g.value(pred).shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "relative_l2",
            detail: format!("{:?} vs {:?}", g.value(pred).shape(), target.shape()),
        }
        .into());
    }
    let tnorm = target.norm_l2();
    if tnorm <= 0.0 {
        return Err(TrainError::DegenerateTarget);
    }
    let t = g.constant(target.clone())?;
    let d = g.sub(pred, t)?;
    let sq = g.mul(d, d)?;
    let s = g.sum(sq)?;
    let n = g.sqrt(s)?;
    Ok(g.scale(n, 1.0 / tnorm)?)
}

/// Plain ||pred - target||_2 as a graph node.
pub fn plain_l2_graph<S: Scalar>(g: &mut Graph<S>, pred: Var, target: &Tensor<S>) -> Result<Var> {
    if g.value(pred).shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "plain_l2",
            detail: format!("{:?} vs {:?}", g.value(pred).shape(), target.shape()),
        }
        .into());
    }
    let t = g.constant(target.clone())?;
    let d = g.sub(pred, t)?;
    let sq = g.mul(d, d)?;
    let s = g.sum(sq)?;
    Ok(g.sqrt(s)?)
}

pub fn loss_graph<S: Scalar>(g: &mut Graph<S>, kind: LossKind, pred: Var, target: &Tensor<S>) -> Result<Var> {
    match kind {
        LossKind::Relative => relative_l2_graph(g, pred, target),
        LossKind::Plain => plain_l2_graph(g, pred, target),
    }
}

/// Value-level relative L2, for logging and oracles.
pub fn relative_l2<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "relative_l2",
            detail: format!("{:?} vs {:?}", pred.shape(), target.shape()),
        }
        .into());
    }
    let tnorm = target.norm_l2();
    if tnorm <= 0.0 {
        return Err(TrainError::DegenerateTarget);
    }
    let mut acc = 0.0;
    for (p, t) in pred.data().iter().zip(target.data()) {
        let d = p.to_f64() - t.to_f64();
        acc += d * d;
    }
    Ok(acc.sqrt() / tnorm)
}
