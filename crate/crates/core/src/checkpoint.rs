//! Model persistence: a JSON manifest describing shapes and provenance,
//! plus a little-endian `f64` blob holding every parameter in manifest
//! order. The manifest is self-contained — it carries the vocabulary, so a
//! loaded model can re-encode raw text exactly as at save time.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{TaskKind, Vocabulary};
use crate::error::{Error, Result};
use crate::models::classifier::{ClassifierModel, EncoderKind};
use crate::models::span::SpanModel;
use crate::models::{TaskModel, TensorSet};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Enough architecture detail to rebuild the parameter holder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelMeta {
    MeanPool { embedding_dim: usize, num_classes: usize },
    Recurrent { embedding_dim: usize, hidden_dim: usize, num_classes: usize },
    Span { embedding_dim: usize, hidden_dim: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub task: TaskKind,
    pub model: ModelMeta,
    pub vocab: Vocabulary,
    /// Name of the companion blob file, relative to the manifest.
    pub blob: String,
    pub tensors: Vec<TensorMeta>,
    pub seed: u64,
    pub config_sha: String,
}

/// A concrete (f64) model of either task, as stored on disk.
#[derive(Debug, Clone)]
pub enum StoredModel {
    Classifier(ClassifierModel<f64>),
    Span(SpanModel<f64>),
}

impl StoredModel {
    pub fn task(&self) -> TaskKind {
        match self {
            StoredModel::Classifier(_) => TaskKind::Classification,
            StoredModel::Span(_) => TaskKind::Qa,
        }
    }

    fn meta(&self) -> ModelMeta {
        match self {
            StoredModel::Classifier(m) => {
                let embedding_dim = m.embedding().dim().1;
                match m.encoder() {
                    EncoderKind::MeanPool => ModelMeta::MeanPool {
                        embedding_dim,
                        num_classes: m.num_classes(),
                    },
                    EncoderKind::Recurrent => ModelMeta::Recurrent {
                        embedding_dim,
                        hidden_dim: m.hidden_dim().expect("recurrent encoder has a cell"),
                        num_classes: m.num_classes(),
                    },
                }
            }
            StoredModel::Span(m) => ModelMeta::Span {
                embedding_dim: m.embedding().dim().1,
                hidden_dim: m.hidden_dim(),
            },
        }
    }

    fn tensor_meta(&self) -> Vec<TensorMeta> {
        let describe = |tensors: Vec<(&'static str, ndarray::ArrayViewD<'_, f64>)>| {
            tensors
                .into_iter()
                .map(|(name, view)| TensorMeta {
                    name: name.to_string(),
                    shape: view.shape().to_vec(),
                })
                .collect()
        };
        match self {
            StoredModel::Classifier(m) => describe(m.params().tensors()),
            StoredModel::Span(m) => describe(m.params().tensors()),
        }
    }

    fn flat_values(&self) -> Vec<f64> {
        match self {
            StoredModel::Classifier(m) => m.params().read_flat(),
            StoredModel::Span(m) => m.params().read_flat(),
        }
    }

    fn write_values(&mut self, vals: &[f64]) -> Result<()> {
        match self {
            StoredModel::Classifier(m) => m.params_mut().write_flat(vals),
            StoredModel::Span(m) => m.params_mut().write_flat(vals),
        }
    }
}

fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

fn blob_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

/// Write `<stem>.json` and `<stem>.bin`.
pub fn save_checkpoint(
    stem: &Path,
    model: &StoredModel,
    vocab: &Vocabulary,
    seed: u64,
    config_sha: &str,
) -> Result<()> {
    let blob_file = blob_path(stem);
    let blob_name = blob_file
        .file_name()
        .ok_or_else(|| Error::Checkpoint(format!("bad checkpoint stem {stem:?}")))?
        .to_string_lossy()
        .into_owned();
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        task: model.task(),
        model: model.meta(),
        vocab: vocab.clone(),
        blob: blob_name,
        tensors: model.tensor_meta(),
        seed,
        config_sha: config_sha.to_string(),
    };
    let mut manifest_json = serde_json::to_vec_pretty(&manifest)?;
    manifest_json.push(b'\n');
    std::fs::write(manifest_path(stem), manifest_json)?;
    let values = model.flat_values();
    let mut writer = std::io::BufWriter::new(std::fs::File::create(&blob_file)?);
    for v in values {
        writer.write_all(&v.to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a checkpoint back from its manifest path (or stem).
pub fn load_checkpoint(path: &Path) -> Result<(StoredModel, CheckpointManifest)> {
    let manifest_file = if path.extension().is_some_and(|e| e == "json") {
        path.to_path_buf()
    } else {
        manifest_path(path)
    };
    let text = std::fs::read_to_string(&manifest_file)?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("unreadable manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} not supported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let vocab_size = manifest.vocab.size();
    // fresh weights are immediately overwritten from the blob
    let mut model = match manifest.model {
        ModelMeta::MeanPool { embedding_dim, num_classes } => {
            StoredModel::Classifier(ClassifierModel::new(
                vocab_size,
                embedding_dim,
                0,
                num_classes,
                EncoderKind::MeanPool,
                0,
            )?)
        }
        ModelMeta::Recurrent { embedding_dim, hidden_dim, num_classes } => {
            StoredModel::Classifier(ClassifierModel::new(
                vocab_size,
                embedding_dim,
                hidden_dim,
                num_classes,
                EncoderKind::Recurrent,
                0,
            )?)
        }
        ModelMeta::Span { embedding_dim, hidden_dim } => {
            StoredModel::Span(SpanModel::new(vocab_size, embedding_dim, hidden_dim, 0)?)
        }
    };
    let actual = model.tensor_meta();
    if actual != manifest.tensors {
        return Err(Error::Checkpoint(format!(
            "tensor layout mismatch: manifest {:?} vs model {:?}",
            manifest.tensors, actual
        )));
    }
    let blob_file = manifest_file
        .parent()
        .map(|d| d.join(&manifest.blob))
        .unwrap_or_else(|| PathBuf::from(&manifest.blob));
    let mut bytes = Vec::new();
    std::fs::File::open(&blob_file)?.read_to_end(&mut bytes)?;
    let expected: usize = manifest
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    if bytes.len() != expected * 8 {
        return Err(Error::Checkpoint(format!(
            "parameter blob holds {} bytes, manifest implies {}",
            bytes.len(),
            expected * 8
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks_exact yields 8 bytes")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Checkpoint("parameter blob contains non-finite values".into()));
    }
    model.write_values(&values)?;
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn vocab(n: usize) -> Vocabulary {
        let mut v = Vocabulary::new();
        for i in 0..n {
            v.get_or_insert(&format!("w{i}"));
        }
        v
    }

    #[test]
    fn classifier_round_trips_bitwise() {
        let dir = tempdir().unwrap();
        let stem = dir.path().join("checkpoint");
        let v = vocab(20);
        let model =
            ClassifierModel::<f64>::new(v.size(), 8, 6, 3, EncoderKind::Recurrent, 11).unwrap();
        let stored = StoredModel::Classifier(model.clone());
        save_checkpoint(&stem, &stored, &v, 11, "beef").unwrap();
        let (loaded, manifest) = load_checkpoint(&stem).unwrap();
        assert_eq!(manifest.seed, 11);
        assert_eq!(manifest.config_sha, "beef");
        assert_eq!(manifest.task, TaskKind::Classification);
        assert_eq!(manifest.vocab.size(), v.size());
        let StoredModel::Classifier(back) = loaded else { panic!("classifier expected") };
        assert_eq!(back.params().read_flat(), model.params().read_flat());
        assert_eq!(back.num_classes(), 3);
        assert_eq!(back.encoder(), EncoderKind::Recurrent);
    }

    #[test]
    fn span_model_round_trips_bitwise() {
        let dir = tempdir().unwrap();
        let stem = dir.path().join("qa");
        let v = vocab(30);
        let model = SpanModel::<f64>::new(v.size(), 8, 5, 3).unwrap();
        save_checkpoint(&stem, &StoredModel::Span(model.clone()), &v, 3, "feed").unwrap();
        // loading via the manifest path works too
        let (loaded, _) = load_checkpoint(&stem.with_extension("json")).unwrap();
        let StoredModel::Span(back) = loaded else { panic!("span model expected") };
        assert_eq!(back.params().read_flat(), model.params().read_flat());
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempdir().unwrap();
        let stem = dir.path().join("checkpoint");
        let v = vocab(10);
        let model =
            ClassifierModel::<f64>::new(v.size(), 4, 0, 2, EncoderKind::MeanPool, 1).unwrap();
        save_checkpoint(&stem, &StoredModel::Classifier(model), &v, 1, "00").unwrap();
        let blob = stem.with_extension("bin");
        let bytes = std::fs::read(&blob).unwrap();
        std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
        let err = load_checkpoint(&stem).unwrap_err();
        assert!(err.to_string().contains("blob"));
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let dir = tempdir().unwrap();
        let stem = dir.path().join("checkpoint");
        let v = vocab(10);
        let model =
            ClassifierModel::<f64>::new(v.size(), 4, 0, 2, EncoderKind::MeanPool, 1).unwrap();
        save_checkpoint(&stem, &StoredModel::Classifier(model), &v, 1, "00").unwrap();
        let manifest = stem.with_extension("json");
        let text = std::fs::read_to_string(&manifest)
            .unwrap()
            .replace("\"format_version\": 1", "\"format_version\": 2");
        std::fs::write(&manifest, text).unwrap();
        let err = load_checkpoint(&stem).unwrap_err();
        assert!(err.to_string().contains("version"));
    }
}
