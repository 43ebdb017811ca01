//! Experiment configuration: one JSON file describing the task, data,
//! model, training, substitution search, and hinting, plus dotted-path
//! overrides for sweeps.
//!
//! A raw config may leave sub-seeds and task-dependent settings blank;
//! [`ExperimentConfig::resolve`] fills every blank deterministically from
//! the master seed and hashes the result, so a resolved config pins a run
//! completely and its hash can scope the output directory.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{SyntheticSpec, TaskKind};
use crate::error::{Error, Result};
use crate::hints::{HintPattern, HintSpec};
use crate::trainer::TrainConfig;

/// Stable per-purpose salts for deriving sub-seeds from the master seed.
pub const SALT_DATA: u64 = 0x6461_7461;
pub const SALT_MODEL: u64 = 0x6d6f_6465_6c00;
pub const SALT_TRAIN: u64 = 0x7472_6169_6e00;
pub const SALT_HINTS: u64 = 0x6869_6e74_7300;

/// SplitMix64 finalizer: spreads a salted master seed over the whole u64
/// range so related experiments never share RNG streams.
pub fn derive_seed(master: u64, salt: u64) -> u64 {
    let mut z = master ^ salt;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Where the dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    Synthetic(SyntheticSpec),
    Jsonl(JsonlPaths),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JsonlPaths {
    pub train: String,
    #[serde(default)]
    pub validation: Option<String>,
    #[serde(default)]
    pub test: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    MeanPool,
    Recurrent,
    Span,
}

fn default_embedding_dim() -> usize {
    16
}
fn default_hidden_dim() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    /// Optional pretrained word-vector file (token followed by values).
    #[serde(default)]
    pub vectors: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Mirror of [`TrainConfig`] whose seed may be left blank in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_batch_size() -> usize {
    16
}
fn default_max_epochs() -> usize {
    5
}

impl TrainSection {
    /// Concrete training config; the seed must already be resolved.
    pub fn to_train_config(&self) -> Result<TrainConfig> {
        let seed = self.seed.ok_or_else(|| {
            Error::config("train.seed", "unresolved; call resolve() first")
        })?;
        Ok(TrainConfig {
            learning_rate: self.learning_rate,
            max_grad_norm: self.max_grad_norm,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            weight_decay: self.weight_decay,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitChoice {
    Train,
    Validation,
    Test,
}

impl SplitChoice {
    pub fn name(self) -> &'static str {
        match self {
            SplitChoice::Train => "train",
            SplitChoice::Validation => "validation",
            SplitChoice::Test => "test",
        }
    }
}

fn default_tau() -> Option<f64> {
    Some(0.5)
}
fn default_eval_split() -> SplitChoice {
    SplitChoice::Test
}

/// Settings for the alternating noise-regeneration loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinMinSection {
    /// Steps between milestone evaluations (M); defaults by task when blank.
    #[serde(default)]
    pub interval: Option<usize>,
    /// Improvement threshold for the exit rule.
    #[serde(default)]
    pub epsilon: f64,
    /// Cosine-similarity threshold for admissible substitutes; `null`
    /// removes the constraint entirely.
    #[serde(default = "default_tau")]
    pub tau: Option<f64>,
    #[serde(default = "default_eval_split")]
    pub eval_split: SplitChoice,
}

impl Default for MinMinSection {
    fn default() -> Self {
        MinMinSection {
            interval: None,
            epsilon: 0.0,
            tau: default_tau(),
            eval_split: default_eval_split(),
        }
    }
}

/// Milestone interval used when the config leaves it blank.
pub fn default_interval(task: TaskKind) -> usize {
    match task {
        TaskKind::Classification => 30,
        TaskKind::Qa => 10,
    }
}

fn default_top_k() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// How many top substitutes per class the reports cover.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection { top_k: default_top_k() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment name; becomes a directory component under the output root.
    pub name: String,
    pub task: TaskKind,
    /// Master seed; every unset sub-seed is derived from it.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    #[serde(default)]
    pub minmin: MinMinSection,
    #[serde(default)]
    pub hints: Option<HintSpec>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    /// Output root; overridable by environment or flag, and excluded from
    /// the config hash (it says where results land, not what they are).
    #[serde(default)]
    pub output: Option<String>,
}

/// A fully resolved config plus its identity hash.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub config: ExperimentConfig,
    /// SHA-256 hex of the canonical resolved config (output root excluded).
    pub sha: String,
}

impl ExperimentConfig {
    /// Parse a config value after overrides have been applied.
    pub fn from_value(value: serde_json::Value) -> Result<Self> {
        serde_json::from_value(value)
            .map_err(|e| Error::config("<config>", e.to_string()))
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<ResolvedConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::config("<config>", format!("not valid JSON: {e}")))?;
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        Self::from_value(value)?.resolve()
    }

    /// Fill every blank (sub-seeds, task defaults), validate, and hash.
    pub fn resolve(mut self) -> Result<ResolvedConfig> {
        let master = self.seed;
        match &mut self.data {
            DataConfig::Synthetic(spec) => {
                spec.task = self.task;
                if spec.seed == 0 {
                    spec.seed = derive_seed(master, SALT_DATA);
                }
            }
            DataConfig::Jsonl(_) => {}
        }
        if self.model.seed.is_none() {
            self.model.seed = Some(derive_seed(master, SALT_MODEL));
        }
        if self.train.seed.is_none() {
            self.train.seed = Some(derive_seed(master, SALT_TRAIN));
        }
        if self.minmin.interval.is_none() {
            self.minmin.interval = Some(default_interval(self.task));
        }
        if let Some(hints) = &mut self.hints {
            if hints.seed.is_none() {
                hints.seed = Some(derive_seed(master, SALT_HINTS));
            }
        }
        self.validate()?;
        let sha = self.content_hash()?;
        Ok(ResolvedConfig { config: self, sha })
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config(
                "name",
                "must be a non-empty name without path separators",
            ));
        }
        match (self.task, self.model.kind) {
            (TaskKind::Classification, ModelKind::Span) => {
                return Err(Error::config(
                    "model.kind",
                    "span extraction model requires the qa task",
                ));
            }
            (TaskKind::Qa, ModelKind::MeanPool | ModelKind::Recurrent) => {
                return Err(Error::config(
                    "model.kind",
                    "the qa task requires the span model",
                ));
            }
            _ => {}
        }
        if self.model.embedding_dim == 0 {
            return Err(Error::config("model.embedding_dim", "must be positive"));
        }
        if self.model.hidden_dim == 0 {
            return Err(Error::config("model.hidden_dim", "must be positive"));
        }
        match &self.data {
            DataConfig::Synthetic(spec) => spec.validate()?,
            DataConfig::Jsonl(paths) => {
                if paths.train.is_empty() {
                    return Err(Error::config("data.train", "path must be non-empty"));
                }
            }
        }
        self.train.to_train_config()?.validate().map_err(|e| match e {
            Error::Config { field, message } => {
                Error::config(format!("train.{field}"), message)
            }
            other => other,
        })?;
        let interval = self
            .minmin
            .interval
            .ok_or_else(|| Error::config("minmin.interval", "unresolved"))?;
        if interval == 0 {
            return Err(Error::config("minmin.interval", "must be at least 1"));
        }
        if !self.minmin.epsilon.is_finite() || self.minmin.epsilon < 0.0 {
            return Err(Error::config("minmin.epsilon", "must be finite and >= 0"));
        }
        if let Some(tau) = self.minmin.tau {
            if !tau.is_finite() || tau <= -1.0 || tau > 1.0 {
                return Err(Error::config(
                    "minmin.tau",
                    "cosine threshold must lie in (-1, 1]",
                ));
            }
        }
        if self.analysis.top_k == 0 {
            return Err(Error::config("analysis.top_k", "must be at least 1"));
        }
        if let Some(hints) = &self.hints {
            hints.validate()?;
            match (&hints.pattern, self.task) {
                (HintPattern::Label { .. }, TaskKind::Qa) => {
                    return Err(Error::config(
                        "hints.kind",
                        "label hints require the classification task",
                    ));
                }
                (HintPattern::Answer { .. }, TaskKind::Classification) => {
                    return Err(Error::config(
                        "hints.kind",
                        "answer hints require the qa task",
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON with the output root blanked.
    fn content_hash(&self) -> Result<String> {
        let mut hashed = self.clone();
        hashed.output = None;
        let canonical = serde_json::to_string(&hashed)?;
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}

impl ResolvedConfig {
    /// First 8 hash characters; enough to scope run directories.
    pub fn short_sha(&self) -> &str {
        &self.sha[..8]
    }

    pub fn to_pretty_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(&self.config)?;
        text.push('\n');
        Ok(text)
    }
}

/// Set `key` (a dotted path like `train.learning_rate`) to `raw` inside a
/// JSON tree, creating intermediate objects as needed. The value is parsed
/// as JSON when possible and kept as a string otherwise.
pub fn apply_override(root: &mut serde_json::Value, key: &str, raw: &str) -> Result<()> {
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(key, "override path must be dotted identifiers"));
    }
    let mut node = root;
    let mut segments = key.split('.').peekable();
    while let Some(segment) = segments.next() {
        let map = node.as_object_mut().ok_or_else(|| {
            Error::config(key, format!("`{segment}` does not address an object"))
        })?;
        if segments.peek().is_none() {
            let value = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            map.insert(segment.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(segment.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("loop either sets the leaf or recurses")
}
