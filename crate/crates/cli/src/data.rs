//! Turning a resolved config into encoded datasets and a model.
//!
//! The same assembly runs for every command so that a config always denotes
//! one dataset and one model, no matter which verb touches it.

use std::collections::BTreeSet;
use std::path::Path;

use unlearnable_core::checkpoint::StoredModel;
use unlearnable_core::config::{DataConfig, ExperimentConfig, ModelKind, SplitChoice};
use unlearnable_core::corpus::{
    encode_qa, encode_text, generate_synthetic, load_qa_jsonl, load_text_jsonl,
    vocabulary_over, Dataset, RawDataset, TaskKind, Vocabulary,
};
use unlearnable_core::embedding::load_pretrained;
use unlearnable_core::hints::apply_hints;
use unlearnable_core::models::classifier::{ClassifierModel, EncoderKind};
use unlearnable_core::models::span::SpanModel;
use unlearnable_core::models::TaskModel;
use unlearnable_core::{Error, Result};

/// Raw splits straight from the source, before tokenization.
pub struct RawSplits {
    pub train: RawDataset,
    pub validation: Option<RawDataset>,
    pub test: Option<RawDataset>,
}

/// Encoded splits sharing one vocabulary.
pub struct Bundle {
    pub vocab: Vocabulary,
    pub num_classes: usize,
    pub train: Dataset,
    pub validation: Option<Dataset>,
    pub test: Option<Dataset>,
    /// Instance ids that received a hint, when hinting was requested.
    pub hinted_ids: Option<BTreeSet<String>>,
}

/// Load the raw splits named by the config.
pub fn load_raw(config: &ExperimentConfig) -> Result<RawSplits> {
    let splits = match &config.data {
        DataConfig::Synthetic(spec) => {
            let data = generate_synthetic(spec)?;
            RawSplits {
                train: data.train,
                validation: Some(data.validation),
                test: Some(data.test),
            }
        }
        DataConfig::Jsonl(paths) => {
            let load = |path: &str| -> Result<RawDataset> {
                match config.task {
                    TaskKind::Classification => {
                        Ok(RawDataset::Text(load_text_jsonl(Path::new(path))?))
                    }
                    TaskKind::Qa => Ok(RawDataset::Qa(load_qa_jsonl(Path::new(path))?)),
                }
            };
            RawSplits {
                train: load(&paths.train)?,
                validation: paths.validation.as_deref().map(load).transpose()?,
                test: paths.test.as_deref().map(load).transpose()?,
            }
        }
    };
    if splits.train.len() == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(splits)
}

fn class_count(config: &ExperimentConfig, splits: &RawSplits) -> usize {
    if config.task == TaskKind::Qa {
        return 0;
    }
    if let DataConfig::Synthetic(spec) = &config.data {
        return spec.num_classes;
    }
    let mut max_label = 0;
    for raw in [Some(&splits.train), splits.validation.as_ref(), splits.test.as_ref()]
        .into_iter()
        .flatten()
    {
        if let RawDataset::Text(items) = raw {
            for item in items {
                max_label = max_label.max(item.label);
            }
        }
    }
    max_label + 1
}

/// Build the vocabulary, encode every split, and optionally hint the
/// training split (hints never touch validation or test data).
pub fn assemble(config: &ExperimentConfig, hint_train: bool) -> Result<Bundle> {
    let splits = load_raw(config)?;
    let num_classes = class_count(config, &splits);
    let mut present: Vec<&RawDataset> = vec![&splits.train];
    present.extend(splits.validation.iter());
    present.extend(splits.test.iter());
    let mut vocab = vocabulary_over(&present)?;

    let encode = |raw: &RawDataset, vocab: &Vocabulary| -> Result<Dataset> {
        match raw {
            RawDataset::Text(items) => {
                Ok(Dataset::Text(encode_text(items, vocab, num_classes)?))
            }
            RawDataset::Qa(items) => Ok(Dataset::Qa(encode_qa(items, vocab)?)),
        }
    };

    let mut train = encode(&splits.train, &vocab)?;
    let mut hinted_ids = None;
    if hint_train {
        let spec = config.hints.as_ref().ok_or_else(|| {
            Error::config("hints", "this command needs a hints section in the config")
        })?;
        let seed = spec.seed.ok_or_else(|| {
            Error::config("hints.seed", "unresolved; call resolve() first")
        })?;
        let (hinted, ids) = apply_hints(&train, spec, &mut vocab, seed)?;
        train = hinted;
        hinted_ids = Some(ids);
    }
    let validation = splits.validation.as_ref().map(|raw| encode(raw, &vocab)).transpose()?;
    let test = splits.test.as_ref().map(|raw| encode(raw, &vocab)).transpose()?;

    Ok(Bundle { vocab, num_classes, train, validation, test, hinted_ids })
}

impl Bundle {
    pub fn split(&self, choice: SplitChoice) -> Option<&Dataset> {
        match choice {
            SplitChoice::Train => Some(&self.train),
            SplitChoice::Validation => self.validation.as_ref(),
            SplitChoice::Test => self.test.as_ref(),
        }
    }

    /// Preferred held-out split for epoch-level evaluation during training:
    /// validation when present, else test.
    pub fn eval_pair(&self) -> Option<(&'static str, &Dataset)> {
        if let Some(v) = &self.validation {
            return Some(("validation", v));
        }
        self.test.as_ref().map(|t| ("test", t))
    }
}

/// Construct the configured model over `vocab`, loading pretrained vectors
/// when the config names a vector file.
pub fn build_model(config: &ExperimentConfig, vocab: &Vocabulary, num_classes: usize) -> Result<StoredModel> {
    let seed = config
        .model
        .seed
        .ok_or_else(|| Error::config("model.seed", "unresolved; call resolve() first"))?;
    let emb_dim = config.model.embedding_dim;
    let hid_dim = config.model.hidden_dim;
    let mut model = match config.model.kind {
        ModelKind::MeanPool => StoredModel::Classifier(ClassifierModel::new(
            vocab.size(),
            emb_dim,
            hid_dim,
            num_classes,
            EncoderKind::MeanPool,
            seed,
        )?),
        ModelKind::Recurrent => StoredModel::Classifier(ClassifierModel::new(
            vocab.size(),
            emb_dim,
            hid_dim,
            num_classes,
            EncoderKind::Recurrent,
            seed,
        )?),
        ModelKind::Span => {
            StoredModel::Span(SpanModel::new(vocab.size(), emb_dim, hid_dim, seed)?)
        }
    };
    if let Some(path) = &config.model.vectors {
        let (matrix, coverage) = load_pretrained::<f64>(Path::new(path), vocab, seed)?;
        if matrix.dim().1 != emb_dim {
            return Err(Error::config(
                "model.vectors",
                format!(
                    "vector file has dimension {}, config says {emb_dim}",
                    matrix.dim().1
                ),
            ));
        }
        log::info!("loaded vectors from {path}: coverage {coverage:.3}");
        match &mut model {
            StoredModel::Classifier(m) => m.params_mut().embedding = matrix,
            StoredModel::Span(m) => m.params_mut().embedding = matrix,
        }
    }
    Ok(model)
}
