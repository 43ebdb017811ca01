//! Alternating bi-level optimization: train the model while periodically
//! regenerating error-minimizing noise for the whole training set.
//!
//! Every `interval` optimizer steps the driver evaluates on a held-out
//! split. The first evaluation (step 0) always proceeds, so milestone 0 is
//! generated on the randomly initialized model; afterwards, the run stops at
//! the first evaluation that fails to improve the best metric so far.
//! Between milestones, every batch has the current noise applied before the
//! gradient step.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{sgd_step, TaskModel};
use crate::scalar::{as_f64, Real};
use crate::search::{search_modification, ConstraintSet, Modification};
use crate::trace::{MetricTrace, METRIC_LOSS, SPLIT_TRAIN};
use crate::trainer::{batch_gradients, TrainConfig};

/// Noise generated at one milestone: at most one substitution per training
/// instance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSet {
    pub milestone: usize,
    /// Optimizer step at which this set was generated (`milestone · interval`).
    pub step: u64,
    pub modifications: Vec<Modification>,
}

impl NoiseSet {
    /// Index modifications by instance id; duplicates are rejected.
    pub fn by_id(&self) -> Result<HashMap<&str, &Modification>> {
        let mut map = HashMap::with_capacity(self.modifications.len());
        for m in &self.modifications {
            if map.insert(m.instance_id.as_str(), m).is_some() {
                return Err(Error::CorruptNoiseSet(format!(
                    "instance `{}` modified twice in milestone {}",
                    m.instance_id, self.milestone
                )));
            }
        }
        Ok(map)
    }
}

#[derive(Serialize, Deserialize)]
struct WireNoiseSet {
    milestone: usize,
    #[serde(default)]
    step: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    config_sha: String,
    modifications: Vec<WireModification>,
}

#[derive(Serialize, Deserialize)]
struct WireModification {
    id: String,
    p: usize,
    s_token: String,
}

/// Serialize a noise set with the substitute stored as its token string, so
/// files remain inspectable without the vocabulary. `seed` and `config_sha`
/// tie the artifact back to the run that produced it.
pub fn save_noise_set(
    path: &Path,
    set: &NoiseSet,
    vocab: &Vocabulary,
    seed: u64,
    config_sha: &str,
) -> Result<()> {
    let mods = set
        .modifications
        .iter()
        .map(|m| {
            let token = vocab.token(m.substitute).ok_or_else(|| {
                Error::CorruptNoiseSet(format!(
                    "substitute id {} outside vocabulary of size {}",
                    m.substitute,
                    vocab.size()
                ))
            })?;
            Ok(WireModification {
                id: m.instance_id.clone(),
                p: m.position,
                s_token: token.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let wire = WireNoiseSet {
        milestone: set.milestone,
        step: set.step,
        seed,
        config_sha: config_sha.to_string(),
        modifications: mods,
    };
    let mut buf = serde_json::to_vec_pretty(&wire)?;
    buf.push(b'\n');
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_noise_set(path: &Path, vocab: &Vocabulary) -> Result<NoiseSet> {
    let text = std::fs::read_to_string(path)?;
    let wire: WireNoiseSet = serde_json::from_str(&text)
        .map_err(|e| Error::CorruptNoiseSet(format!("{}: {e}", path.display())))?;
    let modifications = wire
        .modifications
        .into_iter()
        .map(|m| {
            let substitute = vocab.id(&m.s_token).ok_or_else(|| {
                Error::CorruptNoiseSet(format!(
                    "substitute token `{}` not in vocabulary",
                    m.s_token
                ))
            })?;
            Ok(Modification { instance_id: m.id, position: m.p, substitute })
        })
        .collect::<Result<Vec<_>>>()?;
    let set = NoiseSet { milestone: wire.milestone, step: wire.step, modifications };
    set.by_id()?;
    Ok(set)
}

/// Apply a noise set to a dataset: covered instances get their single
/// substitution, uncovered instances pass through unchanged. The input is
/// untouched.
pub fn apply_noise(dataset: &Dataset, set: &NoiseSet) -> Result<Dataset> {
    let by_id = set.by_id()?;
    Ok(match dataset {
        Dataset::Text(d) => {
            let mut out = d.clone();
            for inst in &mut out.instances {
                if let Some(m) = by_id.get(inst.id.as_str()) {
                    *inst = inst.with_substitution(m.position, m.substitute)?;
                }
            }
            Dataset::Text(out)
        }
        Dataset::Qa(d) => {
            let mut out = d.clone();
            for inst in &mut out.instances {
                if let Some(m) = by_id.get(inst.id.as_str()) {
                    *inst = inst.with_substitution(m.position, m.substitute)?;
                }
            }
            Dataset::Qa(out)
        }
    })
}

/// Instance-level counterpart of [`apply_noise`] for a model's instance type.
pub fn apply_to_instances<R: Real, M: TaskModel<R>>(
    instances: &[M::Instance],
    set: &NoiseSet,
) -> Result<Vec<M::Instance>> {
    let by_id = set.by_id()?;
    instances
        .iter()
        .map(|inst| match by_id.get(M::instance_id(inst)) {
            Some(m) => M::substitute(inst, m.position, m.substitute),
            None => Ok(inst.clone()),
        })
        .collect()
}

/// Exit rule of the alternating loop: continue while each evaluation
/// strictly improves on the best seen, beyond an optional epsilon.
#[derive(Debug, Clone)]
pub struct MilestoneGate {
    epsilon: f64,
    best: Option<f64>,
}

impl MilestoneGate {
    pub fn new(epsilon: f64) -> Self {
        MilestoneGate { epsilon, best: None }
    }

    /// Observe one evaluation; returns whether the run should continue.
    /// The first observation always continues.
    pub fn observe(&mut self, metric: f64) -> bool {
        match self.best {
            None => {
                self.best = Some(metric);
                true
            }
            Some(best) if metric > best + self.epsilon => {
                self.best = Some(metric);
                true
            }
            _ => false,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

#[derive(Debug, Clone)]
pub struct MinMinOptions {
    /// Steps between milestone evaluations (M).
    pub interval: usize,
    /// Improvement threshold for the exit rule; 0 keeps the strict rule.
    pub epsilon: f64,
    pub constraints: ConstraintSet,
    /// Name recorded for the evaluation split in the trace.
    pub eval_split: String,
}

#[derive(Debug, Clone)]
pub struct MinMinOutcome {
    pub noise_sets: Vec<NoiseSet>,
    /// Evaluation metric at each retained milestone (aligned with
    /// `noise_sets`); strictly increasing after the first entry.
    pub milestone_metrics: Vec<f64>,
    pub trace: MetricTrace,
    pub steps: u64,
    /// True if the run stopped on a non-improving evaluation, false if it
    /// exhausted `max_epochs`.
    pub stopped_on_plateau: bool,
    /// Instances left unmodified because the search found no admissible
    /// candidate, summed over milestones.
    pub skipped: usize,
    pub eval_split: String,
}

/// Regenerate noise for every training instance against the current model.
/// Instances where the search fails are left unmodified (and counted);
/// genuine errors abort.
fn regenerate<R: Real, M: TaskModel<R>>(
    model: &M,
    train: &[M::Instance],
    constraints: &ConstraintSet,
) -> Result<(Vec<Modification>, usize)> {
    let results: Vec<Result<Modification>> = train
        .par_iter()
        .map(|inst| search_modification(model, inst, constraints))
        .collect();
    let mut mods = Vec::with_capacity(train.len());
    let mut skipped = 0usize;
    for (inst, res) in train.iter().zip(results) {
        match res {
            Ok(m) => mods.push(m),
            Err(Error::NoAdmissibleModification) => {
                skipped += 1;
                log::warn!(
                    "no admissible modification for `{}`; leaving it clean",
                    M::instance_id(inst)
                );
            }
            Err(e) => return Err(e),
        }
    }
    Ok((mods, skipped))
}

/// One-shot noise generation against a fixed model state (milestone 0 when
/// the model is untrained). Returns the noise set and how many instances
/// had no admissible modification.
pub fn generate_noise<R: Real, M: TaskModel<R>>(
    model: &M,
    train: &[M::Instance],
    constraints: &ConstraintSet,
    milestone: usize,
    step: u64,
) -> Result<(NoiseSet, usize)> {
    let (modifications, skipped) = regenerate(model, train, constraints)?;
    Ok((NoiseSet { milestone, step, modifications }, skipped))
}

/// Run the alternating min-min loop. The model is trained in place; the
/// returned noise sets are the Error-min-0..N artifacts.
pub fn run_minmin<R: Real, M: TaskModel<R>>(
    model: &mut M,
    train: &[M::Instance],
    eval: &[M::Instance],
    cfg: &TrainConfig,
    opts: &MinMinOptions,
) -> Result<MinMinOutcome> {
    cfg.validate()?;
    if opts.interval == 0 {
        return Err(Error::config("minmin.interval", "must be at least 1"));
    }
    if !(opts.epsilon.is_finite() && opts.epsilon >= 0.0) {
        return Err(Error::config("minmin.epsilon", "must be finite and non-negative"));
    }
    if train.is_empty() || eval.is_empty() {
        return Err(Error::InvalidData("min-min needs non-empty train and eval splits".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = MetricTrace::new();
    let mut gate = MilestoneGate::new(opts.epsilon);
    let mut outcome = MinMinOutcome {
        noise_sets: Vec::new(),
        milestone_metrics: Vec::new(),
        trace: MetricTrace::new(),
        steps: 0,
        stopped_on_plateau: false,
        skipped: 0,
        eval_split: opts.eval_split.clone(),
    };
    let mut current: Option<HashMap<String, (usize, u32)>> = None;
    let mut step: u64 = 0;

    let mut order: Vec<usize> = (0..train.len()).collect();
    'epochs: for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if step % opts.interval as u64 == 0 {
                let metric = model.primary_metric(eval)?;
                trace.push(
                    step,
                    epoch as u64,
                    &opts.eval_split,
                    model.metric_name(),
                    metric,
                    None,
                );
                if !gate.observe(metric) {
                    outcome.stopped_on_plateau = true;
                    break 'epochs;
                }
                let milestone = (step / opts.interval as u64) as usize;
                let (mods, skipped) = regenerate(model, train, &opts.constraints)?;
                outcome.skipped += skipped;
                let set = NoiseSet { milestone, step, modifications: mods };
                set.by_id()?;
                outcome.milestone_metrics.push(metric);
                current = Some(
                    set.modifications
                        .iter()
                        .map(|m| (m.instance_id.clone(), (m.position, m.substitute)))
                        .collect(),
                );
                outcome.noise_sets.push(set);
            }

            let noised: Vec<M::Instance> = match &current {
                Some(by_id) => chunk
                    .iter()
                    .map(|&i| {
                        let inst = &train[i];
                        match by_id.get(M::instance_id(inst)) {
                            Some(&(p, s)) => M::substitute(inst, p, s),
                            None => Ok(inst.clone()),
                        }
                    })
                    .collect::<Result<Vec<_>>>()?,
                None => chunk.iter().map(|&i| train[i].clone()).collect(),
            };
            let (grads, mean_loss) = batch_gradients(model, &noised)?;
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
    }

    outcome.steps = step;
    outcome.trace = trace;
    Ok(outcome)
}

/// Effectiveness protocol: train a fresh model on statically noised data.
pub fn train_on_noised<R: Real, M: TaskModel<R>>(
    model: &mut M,
    train: &[M::Instance],
    set: &NoiseSet,
    eval: Option<(&str, &[M::Instance])>,
    cfg: &TrainConfig,
) -> Result<crate::trainer::FitOutcome> {
    let noised = apply_to_instances::<R, M>(train, set)?;
    crate::trainer::fit(model, &noised, eval, cfg)
}
