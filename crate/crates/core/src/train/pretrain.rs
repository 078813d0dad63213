//! Stage-1 pretraining: single-step supervised training of one engine on
//! (state + ground-truth boundary, next state) pairs.

use super::{adam_step, cosine_anneal_lr, loss_graph, AdamHyper, AdamState, Result, TrainError, TrainSchedule};
use crate::nn::{dslcast_forward, init_params, insert_model_params, DslCastConfig, ParamSet};
use crate::rng::SeedStream;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Materialized (input, target) pairs for one engine.
#[derive(Clone, Debug)]
pub struct EngineDataset<S> {
    pub inputs: Vec<Tensor<S>>,
    pub targets: Vec<Tensor<S>>,
}

impl<S: Scalar> EngineDataset<S> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome<S> {
    /// Parameters at the epoch with the lowest validation loss.
    pub best: ParamSet<S>,
    pub best_epoch: usize,
    /// Parameters after the final epoch.
    pub final_params: ParamSet<S>,
    pub history: Vec<EpochStats>,
}

/// Forward + loss + backward for one sample; returns (loss, grads in
/// parameter order).
fn sample_grad<S: Scalar>(
    cfg: &DslCastConfig,
    params: &ParamSet<S>,
    input: &Tensor<S>,
    target: &Tensor<S>,
    loss_kind: super::LossKind,
) -> Result<(f64, Vec<Tensor<S>>)> {
    let mut g = Graph::new();
    let vars = insert_model_params(&mut g, cfg, params, true)?;
    let x = g.constant(input.clone())?;
    let pred = dslcast_forward(&mut g, cfg, &vars, x)?;
    let loss = loss_graph(&mut g, loss_kind, pred, target)?;
    let loss_val = g.value(loss).item().to_f64();
    g.backward(loss)?;
    let mut grads = Vec::with_capacity(params.len());
    for leaf in param_leaves(&vars) {
        grads.push(g.take_grad(leaf)?);
    }
    Ok((loss_val, grads))
}

/// Every parameter Var of a model, in ParamSet order.
pub(crate) fn param_leaves(vars: &crate::nn::ModelVars) -> Vec<crate::tensor::Var> {
    use crate::nn::BlockVars;
    let mut out = vec![vars.embed_w, vars.embed_b, vars.lat_w, vars.lat_b];
    let push_agb = |out: &mut Vec<crate::tensor::Var>, a: &crate::nn::AgbVars| {
        out.extend_from_slice(&[
            a.gn1_g, a.gn1_b, a.kh_w, a.kh_b, a.kv_w, a.kv_b, a.gate_w, a.gate_b, a.mix_w, a.mix_b, a.gn2_g,
            a.gn2_b, a.mlp1_w, a.mlp1_b, a.mlp2_w, a.mlp2_b,
        ]);
    };
    for b in &vars.encoder {
        match b {
            BlockVars::Agb(a) => push_agb(&mut out, a),
            BlockVars::Dsl(d) => {
                push_agb(&mut out, &d.trunk);
                out.extend_from_slice(&[
                    d.flow_w, d.flow_b, d.wgate_w, d.wgate_b, d.wmix_w, d.wmix_b, d.gn2_g, d.gn2_b, d.mlp1_w,
                    d.mlp1_b, d.mlp2_w, d.mlp2_b,
                ]);
            }
        }
    }
    for a in &vars.decoder {
        push_agb(&mut out, a);
    }
    out.extend_from_slice(&[
        vars.unembed_w,
        vars.unembed_b,
        vars.refine1_w,
        vars.refine1_b,
        vars.refine2_w,
        vars.refine2_b,
        vars.refine_gate,
    ]);
    out
}

fn mean_val_loss<S: Scalar>(
    cfg: &DslCastConfig,
    params: &ParamSet<S>,
    val: &EngineDataset<S>,
    loss_kind: super::LossKind,
) -> Result<f64> {
    let losses: Vec<Result<f64>> = val
        .inputs
        .par_iter()
        .zip(val.targets.par_iter())
        .map(|(x, t)| {
            let pred = crate::nn::model_forward_tensor(cfg, params, x)?;
            match loss_kind {
                super::LossKind::Relative => super::relative_l2(&pred, t),
                super::LossKind::Plain => {
                    let mut acc = 0.0;
                    for (p, tv) in pred.data().iter().zip(t.data()) {
                        let d = p.to_f64() - tv.to_f64();
                        acc += d * d;
                    }
                    Ok(acc.sqrt())
                }
            }
        })
        .collect();
    let mut total = 0.0;
    for l in &losses {
        match l {
            Ok(v) => total += v,
            Err(_) => return Err(TrainError::DivergentLoss { epoch: 0, batch: 0 }),
        }
    }
    Ok(total / val.len().max(1) as f64)
}

/// Train one engine with Adam under a cosine learning-rate schedule.
///
/// Deterministic: (seed, config, dataset) fully determine the outcome.
/// A zero-epoch schedule returns the initialization untouched.
pub fn pretrain_engine<S: Scalar>(
    cfg: &DslCastConfig,
    train: &EngineDataset<S>,
    val: &EngineDataset<S>,
    schedule: &TrainSchedule,
) -> Result<PretrainOutcome<S>> {
    cfg.validate()?;
    let mut params: ParamSet<S> = init_params(cfg, schedule.seed)?;
    let mut state = AdamState::for_params(&params);
    let hp = AdamHyper::default();
    let mut history = Vec::new();
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::INFINITY;

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..schedule.epochs {
        let lr = cosine_anneal_lr(epoch, schedule.epochs, schedule.lr0)?;
        let mut rng = SeedStream::new(schedule.seed).derive(&format!("epoch{epoch}"));
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut n_samples = 0usize;
        for (batch_idx, chunk) in order.chunks(schedule.batch_size.max(1)).enumerate() {
            let results: Vec<Result<(f64, Vec<Tensor<S>>)>> = chunk
                .par_iter()
                .map(|&i| sample_grad(cfg, &params, &train.inputs[i], &train.targets[i], schedule.loss))
                .collect();
            // Ordered reduction keeps gradients bit-identical across runs
            // regardless of worker count.
            let mut acc: Option<Vec<Tensor<S>>> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let (l, gs) = r?;
                batch_loss += l;
                match acc.as_mut() {
                    None => acc = Some(gs),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(gs.iter()) {
                            let ad = a.data_mut();
                            for (x, y) in ad.iter_mut().zip(g.data()) {
                                *x += *y;
                            }
                        }
                    }
                }
            }
            let mut grads = acc.expect("non-empty batch");
            let inv = S::from_f64(1.0 / chunk.len() as f64);
            for gt in grads.iter_mut() {
                for v in gt.data_mut() {
                    *v = *v * inv;
                }
            }
            batch_loss /= chunk.len() as f64;
            if !batch_loss.is_finite() {
                return Err(TrainError::DivergentLoss { epoch, batch: batch_idx });
            }
            epoch_loss += batch_loss * chunk.len() as f64;
            n_samples += chunk.len();
            adam_step(&mut params, &grads, &mut state, lr, &hp)?;
        }
        let train_loss = epoch_loss / n_samples.max(1) as f64;
        let val_loss = if !val.is_empty() && (epoch % schedule.val_every.max(1) == 0 || epoch + 1 == schedule.epochs) {
            Some(mean_val_loss(cfg, &params, val, schedule.loss)?)
        } else {
            None
        };
        if let Some(v) = val_loss {
            if v < best_val {
                best_val = v;
                best = params.clone();
                best_epoch = epoch;
            }
        }
        history.push(EpochStats {
            epoch,
            lr,
            train_loss,
            val_loss,
        });
    }
    if !best_val.is_finite() {
        // No validation performed; best falls back to the final parameters.
        best = params.clone();
        best_epoch = schedule.epochs.saturating_sub(1);
    }
    Ok(PretrainOutcome {
        best,
        best_epoch,
        final_params: params,
        history,
    })
}
