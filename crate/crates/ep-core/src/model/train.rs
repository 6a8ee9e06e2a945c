//! Mini-batch Adam trainer with linear warmup and cosine decay, plus
//! checkpoint persistence.

use super::loss::{curve_ade, loss_graph};
use super::net::{EPConfig, EpModel, ScenarioInputs};
use super::tape::{Matrix, Tape};
use crate::error::{EpError, Result};
use crate::scenario::HomogenizedScenario;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
pub const CHECKPOINT_VERSION: u32 = 1;

/// Learning rate at `iter` (0-based): linear warmup to the peak, then cosine
/// decay to zero at `total`.
pub fn lr_at(peak: f64, warmup: usize, total: usize, iter: usize) -> f64 {
    if warmup > 0 && iter < warmup {
        return peak * iter as f64 / warmup as f64;
    }
    if total <= warmup {
        return peak;
    }
    let progress = (iter - warmup) as f64 / (total - warmup) as f64;
    peak * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub iter: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_reg: f64,
    pub loss_cls: f64,
    pub val_minade6: Option<f64>,
}

pub fn log_to_csv(rows: &[TrainLogRow]) -> String {
    let mut out = String::from("epoch,iter,lr,loss_total,loss_reg,loss_cls,val_minade6\n");
    for r in rows {
        let val = r.val_minade6.map_or(String::new(), |v| format!("{v}"));
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch, r.iter, r.lr, r.loss_total, r.loss_reg, r.loss_cls, val
        ));
    }
    out
}

pub struct TrainOutcome {
    pub model: EpModel,
    pub log: Vec<TrainLogRow>,
    pub param_count: usize,
    /// Total agent-loss exclusions observed (missing ground truth).
    pub excluded_agents: usize,
}

/// Best-of-all-modes ADE of the focal agent over its valid future; used as
/// the validation metric during training.
pub fn focal_minade(model: &EpModel, scenario: &HomogenizedScenario) -> Result<f64> {
    let inputs = ScenarioInputs::build(scenario, model.config.variant)?;
    let pred = model.predict_focal(scenario)?;
    let gt = &inputs.gt_future[inputs.focal_index];
    if gt.is_empty() {
        return Err(EpError::ScenarioRejected(
            "focal agent has no ground truth".into(),
        ));
    }
    Ok(pred
        .modes
        .iter()
        .map(|m| curve_ade(&m.curve, gt))
        .fold(f64::INFINITY, f64::min))
}

/// Trains a fresh model on `train_set`, logging one row per epoch.
/// Deterministic for a fixed config (the seed lives in the config).
pub fn train(
    config: EPConfig,
    train_set: &[HomogenizedScenario],
    val_set: &[HomogenizedScenario],
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(EpError::EmptyEvalSet);
    }
    let mut model = EpModel::new(config.clone())?;
    let inputs: Vec<ScenarioInputs> = train_set
        .iter()
        .map(|s| ScenarioInputs::build(s, config.variant))
        .collect::<Result<_>>()?;

    let n = inputs.len();
    let batch = config.batch_size.max(1).min(n);
    let batches_per_epoch = n.div_ceil(batch);
    let total_iters = config.epochs * batches_per_epoch;

    let p = model.params.values.len();
    let mut m: Vec<Matrix> = model
        .params
        .values
        .iter()
        .map(|w| Matrix::zeros(w.rows, w.cols))
        .collect();
    let mut v = m.clone();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9);
    let mut log = Vec::with_capacity(config.epochs);
    let mut excluded_agents = 0usize;
    let mut iter = 0usize;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_total = 0.0;
        let mut epoch_reg = 0.0;
        let mut epoch_cls = 0.0;
        let mut last_lr = 0.0;

        for chunk in order.chunks(batch) {
            let lr = lr_at(config.lr, config.warmup_iters, total_iters, iter);
            last_lr = lr;
            let mut grad_acc: Vec<Matrix> = model
                .params
                .values
                .iter()
                .map(|w| Matrix::zeros(w.rows, w.cols))
                .collect();
            let mut batch_total = 0.0;
            let mut batch_reg = 0.0;
            let mut batch_cls = 0.0;

            for &si in chunk {
                let mut tape = Tape::new();
                let params = model.params.leaves(&mut tape);
                let gl = loss_graph(&model, &mut tape, &params, &inputs[si]).map_err(|e| {
                    match e {
                        EpError::NonFinite(d) => EpError::NanLoss {
                            iter,
                            batch: si,
                            detail: d,
                        },
                        other => other,
                    }
                })?;
                excluded_agents += gl.excluded;
                batch_total += tape.value(gl.total).data[0];
                batch_reg += tape.value(gl.reg).data[0];
                batch_cls += tape.value(gl.cls).data[0];
                let grads = tape.backward(gl.total)?;
                for (acc, g) in grad_acc.iter_mut().zip(grads.iter().take(p)) {
                    for (a, b) in acc.data.iter_mut().zip(&g.data) {
                        *a += b;
                    }
                }
            }

            let inv = 1.0 / chunk.len() as f64;
            if !(batch_total * inv).is_finite() {
                return Err(EpError::NanLoss {
                    iter,
                    batch: 0,
                    detail: format!("batch loss {}", batch_total * inv),
                });
            }
            let t = (iter + 1) as f64;
            let bc1 = 1.0 - ADAM_BETA1.powf(t);
            let bc2 = 1.0 - ADAM_BETA2.powf(t);
            for pi in 0..p {
                for j in 0..model.params.values[pi].len() {
                    let g = grad_acc[pi].data[j] * inv;
                    let mj = &mut m[pi].data[j];
                    *mj = ADAM_BETA1 * *mj + (1.0 - ADAM_BETA1) * g;
                    let vj = &mut v[pi].data[j];
                    *vj = ADAM_BETA2 * *vj + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = m[pi].data[j] / bc1;
                    let vhat = v[pi].data[j] / bc2;
                    model.params.values[pi].data[j] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }

            epoch_total += batch_total * inv;
            epoch_reg += batch_reg * inv;
            epoch_cls += batch_cls * inv;
            iter += 1;
        }

        let val_minade6 = if val_set.is_empty() {
            None
        } else {
            let mut sum = 0.0;
            for s in val_set {
                sum += focal_minade(&model, s)?;
            }
            Some(sum / val_set.len() as f64)
        };
        let nb = batches_per_epoch as f64;
        log.push(TrainLogRow {
            epoch,
            iter,
            lr: last_lr,
            loss_total: epoch_total / nb,
            loss_reg: epoch_reg / nb,
            loss_cls: epoch_cls / nb,
            val_minade6,
        });
    }

    Ok(TrainOutcome {
        param_count: model.param_count(),
        model,
        log,
        excluded_agents,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: EPConfig,
    params: Vec<CheckpointParam>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointParam {
    name: String,
    value: Matrix,
}

impl EpModel {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self
                .params
                .names
                .iter()
                .zip(&self.params.values)
                .map(|(n, v)| CheckpointParam {
                    name: n.clone(),
                    value: v.clone(),
                })
                .collect(),
        };
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &ckpt)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<EpModel> {
        let file = std::fs::File::open(path)?;
        let ckpt: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(EpError::SpecMismatch(format!(
                "checkpoint version {} != {CHECKPOINT_VERSION}",
                ckpt.version
            )));
        }
        let mut model = EpModel::new(ckpt.config)?;
        for cp in ckpt.params {
            let idx = model
                .params
                .names
                .iter()
                .position(|n| *n == cp.name)
                .ok_or_else(|| EpError::SpecMismatch(format!("unknown parameter {}", cp.name)))?;
            let expect = &model.params.values[idx];
            if (expect.rows, expect.cols) != (cp.value.rows, cp.value.cols) {
                return Err(EpError::SpecMismatch(format!(
                    "parameter {} has shape {}x{}, expected {}x{}",
                    cp.name, cp.value.rows, cp.value.cols, expect.rows, expect.cols
                )));
            }
            model.params.values[idx] = cp.value;
        }
        Ok(model)
    }
}
