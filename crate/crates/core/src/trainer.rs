//! Mini-batch SGD over a [`TaskModel`].
//!
//! Batches are formed by a seeded shuffle each epoch; gradients are averaged
//! over the batch instance by instance, so batch composition — not padding —
//! defines the computation and results are bit-reproducible for a fixed
//! seed. Each optimizer step logs the batch loss and the pre-clip global
//! gradient norm; each epoch logs loss and the primary metric on the
//! evaluation split when one is given.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{sgd_step, TaskModel, TensorSet};
use crate::scalar::{as_f64, real, Real};
use crate::trace::{MetricTrace, METRIC_LOSS, SPLIT_TRAIN};

fn default_batch_size() -> usize {
    16
}
fn default_max_epochs() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Global-norm clip threshold; `None` disables clipping.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    /// Stop after this many epochs without improvement on the evaluation
    /// metric; `None` trains for `max_epochs`.
    #[serde(default)]
    pub patience: Option<usize>,
    /// Decoupled weight decay: parameters shrink by `1 - lr * weight_decay`
    /// each step before the gradient update. Zero disables it.
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("train.learning_rate", "must be positive and finite"));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config("train.max_grad_norm", "must be positive and finite"));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("train.max_epochs", "must be positive"));
        }
        if self.patience == Some(0) {
            return Err(Error::config("train.patience", "must be positive when set"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("train.weight_decay", "must be finite and non-negative"));
        }
        if self.learning_rate * self.weight_decay >= 1.0 {
            return Err(Error::config(
                "train.weight_decay",
                "learning_rate * weight_decay must stay below 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub trace: MetricTrace,
    pub steps: u64,
    pub epochs_run: usize,
    /// Best and final evaluation metric, when an evaluation split was given.
    pub best_metric: Option<f64>,
    pub final_metric: Option<f64>,
}

/// Average the per-instance gradients of one batch. Returns the accumulated
/// parameter gradients and the mean loss.
pub fn batch_gradients<R: Real, M: TaskModel<R>>(
    model: &M,
    batch: &[M::Instance],
) -> Result<(M::Params, R)> {
    if batch.is_empty() {
        return Err(Error::InvalidData("empty batch".into()));
    }
    let mut acc: Option<M::Params> = None;
    let mut loss_sum = R::zero();
    for inst in batch {
        let bundle = model.backward(inst)?;
        loss_sum += bundle.loss;
        match &mut acc {
            None => acc = Some(bundle.params),
            Some(a) => a.add_scaled(&bundle.params, R::one()),
        }
    }
    let mut grads = acc.expect("non-empty batch");
    let inv = R::one() / real::<R>(batch.len() as f64);
    grads.scale(inv);
    Ok((grads, loss_sum * inv))
}

/// Train `model` on `train`, optionally evaluating on a named split each
/// epoch. Steps and epochs are 0- and 1-based respectively in the trace.
pub fn fit<R: Real, M: TaskModel<R>>(
    model: &mut M,
    train: &[M::Instance],
    eval: Option<(&str, &[M::Instance])>,
    cfg: &TrainConfig,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidData("cannot train on zero instances".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = MetricTrace::new();
    let mut step: u64 = 0;
    let mut best: Option<f64> = None;
    let mut last: Option<f64> = None;
    let mut since_best = 0usize;
    let mut epochs_run = 0usize;

    let mut order: Vec<usize> = (0..train.len()).collect();
    'epochs: for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<M::Instance> =
                chunk.iter().map(|&i| train[i].clone()).collect();
            let (grads, mean_loss) = batch_gradients(model, &batch)?;
            if !mean_loss.is_finite() {
                return Err(Error::Diverged);
            }
            let norm = sgd_step(model, &grads, cfg.learning_rate, cfg.max_grad_norm, cfg.weight_decay)?;
            trace.push(
                step,
                epoch as u64,
                SPLIT_TRAIN,
                METRIC_LOSS,
                as_f64(mean_loss),
                Some(as_f64(norm)),
            );
            step += 1;
        }

        if let Some((split, insts)) = eval {
            let metric = model.primary_metric(insts)?;
            let loss = model.mean_loss(insts)?;
            trace.push(step, epoch as u64, split, METRIC_LOSS, loss, None);
            trace.push(step, epoch as u64, split, model.metric_name(), metric, None);
            last = Some(metric);
            match best {
                Some(b) if metric <= b => since_best += 1,
                _ => {
                    best = Some(metric);
                    since_best = 0;
                }
            }
            if let Some(p) = cfg.patience {
                if since_best >= p {
                    break 'epochs;
                }
            }
        }
    }

    Ok(FitOutcome {
        trace,
        steps: step,
        epochs_run,
        best_metric: best,
        final_metric: last,
    })
}
