//! Synthetic corpora with a known signal structure.
//!
//! Classification texts mix three word populations: a class-neutral common
//! pool, per-class signal pools (disjoint across classes, with controlled
//! cross-class contamination), and a long rare tail. The label is carried
//! only by the aggregate of class-pool words, never by a single token, so a
//! bag-of-words learner has to accumulate evidence across many words.
//!
//! QA passages are filler with a short entity span as the answer; a cue word
//! from a small closed set sits immediately before the span and reappears in
//! the question. Distractor entities elsewhere in the passage keep "find any
//! entity" from working.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{RawDataset, RawQaInstance, RawTextInstance, TaskKind};

/// Fraction of classification token slots drawn from the common pool.
const COMMON_SLOT: f64 = 0.15;
/// Spread of classification text lengths around the mean.
const LEN_SPREAD: usize = 8;
/// Number of distinct cue words in QA data.
const NUM_CUES: usize = 8;
/// QA passage length bounds (inclusive).
const QA_LEN: (usize, usize) = (20, 60);

fn default_task() -> TaskKind {
    TaskKind::Classification
}
fn default_num_classes() -> usize {
    2
}
fn default_train_per_class() -> usize {
    500
}
fn default_eval_per_class() -> usize {
    100
}
fn default_qa_train() -> usize {
    600
}
fn default_qa_eval() -> usize {
    150
}
fn default_vocab_budget() -> usize {
    2000
}
fn default_mean_len() -> usize {
    24
}
fn default_class_slot() -> f64 {
    0.5
}
fn default_own_class() -> f64 {
    0.85
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Filled from the experiment task when this spec rides inside an
    /// experiment config.
    #[serde(default = "default_task")]
    pub task: TaskKind,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default = "default_train_per_class")]
    pub train_per_class: usize,
    #[serde(default = "default_eval_per_class")]
    pub eval_per_class: usize,
    #[serde(default = "default_qa_train")]
    pub qa_train: usize,
    #[serde(default = "default_qa_eval")]
    pub qa_eval: usize,
    /// Approximate number of distinct word types to draw from.
    #[serde(default = "default_vocab_budget")]
    pub vocab_budget: usize,
    /// Mean classification text length in tokens.
    #[serde(default = "default_mean_len")]
    pub mean_len: usize,
    /// Fraction of classification token slots drawn from a class pool
    /// (the remainder after the common slice falls to the rare tail).
    #[serde(default = "default_class_slot")]
    pub class_slot: f64,
    /// Probability that a class-pool slot uses the instance's own class;
    /// the rest is cross-class contamination.
    #[serde(default = "default_own_class")]
    pub own_class: f64,
    /// Likewise filled from the experiment seed when left out.
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            task: default_task(),
            num_classes: default_num_classes(),
            train_per_class: default_train_per_class(),
            eval_per_class: default_eval_per_class(),
            qa_train: default_qa_train(),
            qa_eval: default_qa_eval(),
            vocab_budget: default_vocab_budget(),
            mean_len: default_mean_len(),
            class_slot: default_class_slot(),
            own_class: default_own_class(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        match self.task {
            TaskKind::Classification => {
                if self.num_classes < 2 {
                    return Err(Error::config("data.num_classes", "need at least 2 classes"));
                }
                if self.num_classes > 16 {
                    return Err(Error::config("data.num_classes", "at most 16 classes supported"));
                }
                if self.train_per_class == 0 || self.eval_per_class == 0 {
                    return Err(Error::config(
                        "data.train_per_class",
                        "per-class counts must be positive",
                    ));
                }
                if self.vocab_budget < 50 * self.num_classes {
                    return Err(Error::config(
                        "data.vocab_budget",
                        format!("need at least {} word types", 50 * self.num_classes),
                    ));
                }
                if self.mean_len < 8 {
                    return Err(Error::config("data.mean_len", "mean length must be at least 8"));
                }
                if !(self.class_slot > 0.0 && self.class_slot + COMMON_SLOT <= 0.95) {
                    return Err(Error::config(
                        "data.class_slot",
                        format!("must lie in (0, {}]", 0.95 - COMMON_SLOT),
                    ));
                }
                if !(self.own_class > 0.0 && self.own_class <= 1.0) {
                    return Err(Error::config("data.own_class", "must lie in (0, 1]"));
                }
            }
            TaskKind::Qa => {
                if self.qa_train == 0 || self.qa_eval == 0 {
                    return Err(Error::config("data.qa_train", "split sizes must be positive"));
                }
                if self.vocab_budget < 400 {
                    return Err(Error::config(
                        "data.vocab_budget",
                        "need at least 400 word types for QA",
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: RawDataset,
    pub validation: RawDataset,
    pub test: RawDataset,
}

/// Generate train/validation/test splits. Fully determined by the spec;
/// each split draws from an independent stream so resizing one split never
/// perturbs another.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let split_rng = |salt: u64| {
        ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
    };
    match spec.task {
        TaskKind::Classification => {
            let pools = ClassPools::build(spec);
            let make = |salt: u64, name: &str, per_class: usize| {
                RawDataset::Text(gen_classification(
                    spec,
                    &pools,
                    name,
                    per_class,
                    &mut split_rng(salt),
                ))
            };
            Ok(SyntheticData {
                train: make(1, "train", spec.train_per_class),
                validation: make(2, "validation", spec.eval_per_class),
                test: make(3, "test", spec.eval_per_class),
            })
        }
        TaskKind::Qa => {
            let pools = QaPools::build(spec);
            let make = |salt: u64, name: &str, count: usize| {
                RawDataset::Qa(gen_qa(&pools, name, count, &mut split_rng(salt)))
            };
            Ok(SyntheticData {
                train: make(1, "train", spec.qa_train),
                validation: make(2, "validation", spec.qa_eval),
                test: make(3, "test", spec.qa_eval),
            })
        }
    }
}

struct ClassPools {
    common: Vec<String>,
    class: Vec<Vec<String>>,
    rare: Vec<String>,
}

impl ClassPools {
    fn build(spec: &SyntheticSpec) -> Self {
        let w = spec.vocab_budget;
        let n_common = (w / 5).max(10);
        let per_class = ((3 * w / 10) / spec.num_classes).max(10);
        let n_rare = (w / 2).max(20);
        ClassPools {
            common: (0..n_common).map(|i| format!("c{i:04}")).collect(),
            class: (0..spec.num_classes)
                .map(|k| (0..per_class).map(|i| format!("k{k}w{i:03}")).collect())
                .collect(),
            rare: (0..n_rare).map(|i| format!("r{i:04}")).collect(),
        }
    }
}

/// Quadratically skewed index: a light-tailed rank distribution that gives
/// common/rare pools a frequent head and a long tail.
fn pick_skewed<'a>(pool: &'a [String], rng: &mut ChaCha8Rng) -> &'a str {
    let r: f64 = rng.random();
    let idx = ((r * r) * pool.len() as f64) as usize;
    &pool[idx.min(pool.len() - 1)]
}

fn pick_uniform<'a>(pool: &'a [String], rng: &mut ChaCha8Rng) -> &'a str {
    &pool[rng.random_range(0..pool.len())]
}

fn gen_classification(
    spec: &SyntheticSpec,
    pools: &ClassPools,
    split: &str,
    per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<RawTextInstance> {
    let k = spec.num_classes;
    let mut out = Vec::with_capacity(per_class * k);
    let lo = spec.mean_len.saturating_sub(LEN_SPREAD).max(5);
    let hi = spec.mean_len + LEN_SPREAD;
    for i in 0..per_class * k {
        let label = i % k;
        let len = rng.random_range(lo..=hi);
        let mut toks: Vec<&str> = Vec::with_capacity(len);
        for _ in 0..len {
            let u: f64 = rng.random();
            if u < COMMON_SLOT {
                toks.push(pick_skewed(&pools.common, rng));
            } else if u < COMMON_SLOT + spec.class_slot {
                let v: f64 = rng.random();
                let cls = if v < spec.own_class || k == 1 {
                    label
                } else {
                    // contamination: any class but the instance's own
                    let mut other = rng.random_range(0..k - 1);
                    if other >= label {
                        other += 1;
                    }
                    other
                };
                toks.push(pick_uniform(&pools.class[cls], rng));
            } else {
                toks.push(pick_skewed(&pools.rare, rng));
            }
        }
        out.push(RawTextInstance {
            id: format!("{split}-{i:05}"),
            text: toks.join(" "),
            label,
        });
    }
    out
}

struct QaPools {
    filler: Vec<String>,
    cues: Vec<String>,
    entities: Vec<String>,
    q_filler: Vec<String>,
}

impl QaPools {
    fn build(spec: &SyntheticSpec) -> Self {
        let w = spec.vocab_budget;
        QaPools {
            filler: (0..(3 * w / 5).max(200)).map(|i| format!("f{i:04}")).collect(),
            cues: (0..NUM_CUES).map(|i| format!("cue{i}")).collect(),
            entities: (0..(w / 8).max(60)).map(|i| format!("ent{i:03}")).collect(),
            q_filler: (0..40).map(|i| format!("qf{i:02}")).collect(),
        }
    }
}

fn gen_qa(
    pools: &QaPools,
    split: &str,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<RawQaInstance> {
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let len = rng.random_range(QA_LEN.0..=QA_LEN.1);
        let mut toks: Vec<String> = (0..len)
            .map(|_| pick_skewed(&pools.filler, rng).to_string())
            .collect();

        // Answer span of 1–2 entity tokens, preceded by a cue word. The
        // bounds keep one filler token on each side of the cue+span block.
        let span_len = rng.random_range(1..=2usize);
        let start = rng.random_range(1..=len - span_len - 1);
        let end = start + span_len - 1;
        let cue = pick_uniform(&pools.cues, rng);
        toks[start - 1] = cue.to_string();
        for t in toks.iter_mut().take(end + 1).skip(start) {
            *t = pick_skewed(&pools.entities, rng).to_string();
        }

        // One or two distractor entities, anywhere clear of the cue+span.
        let n_distract = rng.random_range(1..=2usize);
        for _ in 0..n_distract {
            for _attempt in 0..8 {
                let d = rng.random_range(0..len);
                if d + 2 < start || d > end + 1 {
                    toks[d] = pick_skewed(&pools.entities, rng).to_string();
                    break;
                }
            }
        }

        let q_len = rng.random_range(5..=9usize);
        let mut q: Vec<String> = (0..q_len)
            .map(|_| pick_uniform(&pools.q_filler, rng).to_string())
            .collect();
        let cue_pos = rng.random_range(0..q_len);
        q[cue_pos] = cue.to_string();

        out.push(RawQaInstance {
            id: format!("{split}-{i:05}"),
            passage: toks.join(" "),
            question: q.join(" "),
            answer_start_token: start,
            answer_end_token: end,
        });
    }
    out
}
