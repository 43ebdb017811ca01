//! Datasets, tokenization, and the vocabulary.
//!
//! Tokenization is whitespace splitting over lowercased text — nothing
//! smarter, so that a round trip through [`decode`] and [`tokenize`] is the
//! identity for any text the pipeline itself produces. The vocabulary is
//! built over *all* splits jointly (substitution search must be able to
//! score every word that can ever appear) with two reserved entries:
//! padding at id 0 and unknown at id 1.

mod jsonl;
mod synthetic;

pub use jsonl::{load_qa_jsonl, load_text_jsonl, save_qa_jsonl, save_text_jsonl};
pub use synthetic::{generate_synthetic, SyntheticData, SyntheticSpec};

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
/// Number of reserved ids at the front of every vocabulary.
pub const NUM_SPECIALS: u32 = 2;

/// Which task a dataset / experiment belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Qa,
}

/// Token-to-id mapping with first-occurrence ordering.
///
/// Serializes as the plain token list; the reverse index is rebuilt on
/// deserialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl Eq for Vocabulary {}

impl Vocabulary {
    /// A vocabulary holding only the two reserved entries.
    pub fn new() -> Self {
        let tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of `token`, falling back to the unknown id.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Insert `token` if absent; returns its id either way.
    pub fn get_or_insert(&mut self, token: &str) -> u32 {
        if let Some(id) = self.id(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// True for the reserved padding/unknown ids.
    pub fn is_special(id: u32) -> bool {
        id < NUM_SPECIALS
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Lowercase and split on whitespace. The word-level unit of everything else.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Tokenize `text` against a fixed vocabulary; unseen words map to the
/// unknown id. Rejects texts with no tokens.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<Vec<u32>> {
    let ws = words(text);
    if ws.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(ws.iter().map(|w| vocab.id_or_unk(w)).collect())
}

/// Render token ids back into a space-joined string.
pub fn decode(tokens: &[u32], vocab: &Vocabulary) -> Result<String> {
    let mut parts = Vec::with_capacity(tokens.len());
    for &id in tokens {
        match vocab.token(id) {
            Some(t) => parts.push(t),
            None => {
                return Err(Error::InvalidData(format!(
                    "token id {id} outside vocabulary of size {}",
                    vocab.size()
                )))
            }
        }
    }
    Ok(parts.join(" "))
}

/// Build a vocabulary from raw texts in the order given. Ids are assigned by
/// first occurrence, after the two reserved entries.
pub fn build_vocabulary<'a, I>(texts: I) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut vocab = Vocabulary::new();
    let mut saw_token = false;
    for text in texts {
        for w in words(text) {
            vocab.get_or_insert(&w);
            saw_token = true;
        }
    }
    if !saw_token {
        return Err(Error::EmptyCorpus);
    }
    Ok(vocab)
}

// ---------------------------------------------------------------------------
// Raw (text-level) instances as they appear on disk.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTextInstance {
    pub id: String,
    pub text: String,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawQaInstance {
    pub id: String,
    pub passage: String,
    pub question: String,
    pub answer_start_token: usize,
    pub answer_end_token: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawDataset {
    Text(Vec<RawTextInstance>),
    Qa(Vec<RawQaInstance>),
}

impl RawDataset {
    pub fn len(&self) -> usize {
        match self {
            RawDataset::Text(v) => v.len(),
            RawDataset::Qa(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every text field, in instance order (passage before question for QA).
    /// This is the canonical ordering for vocabulary construction.
    pub fn texts(&self) -> Vec<&str> {
        match self {
            RawDataset::Text(v) => v.iter().map(|i| i.text.as_str()).collect(),
            RawDataset::Qa(v) => v
                .iter()
                .flat_map(|i| [i.passage.as_str(), i.question.as_str()])
                .collect(),
        }
    }
}

/// Vocabulary over several raw datasets jointly, in the order given
/// (conventionally train, validation, test).
pub fn vocabulary_over(sets: &[&RawDataset]) -> Result<Vocabulary> {
    build_vocabulary(sets.iter().flat_map(|s| s.texts()))
}

// ---------------------------------------------------------------------------
// Encoded (id-level) instances the models consume.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextInstance {
    pub id: String,
    pub tokens: Vec<u32>,
    pub label: usize,
}

impl TextInstance {
    /// Copy with position `p` replaced by token `s`.
    pub fn with_substitution(&self, p: usize, s: u32) -> Result<Self> {
        if p >= self.tokens.len() {
            return Err(Error::CorruptNoiseSet(format!(
                "position {p} outside instance `{}` of length {}",
                self.id,
                self.tokens.len()
            )));
        }
        let mut out = self.clone();
        out.tokens[p] = s;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaInstance {
    pub id: String,
    pub passage: Vec<u32>,
    pub question: Vec<u32>,
    /// Inclusive token span of the answer inside the passage.
    pub answer_start: usize,
    pub answer_end: usize,
}

impl QaInstance {
    /// Copy with passage position `p` replaced by token `s`.
    pub fn with_substitution(&self, p: usize, s: u32) -> Result<Self> {
        if p >= self.passage.len() {
            return Err(Error::CorruptNoiseSet(format!(
                "position {p} outside passage `{}` of length {}",
                self.id,
                self.passage.len()
            )));
        }
        let mut out = self.clone();
        out.passage[p] = s;
        Ok(out)
    }

    pub fn answer_span(&self) -> (usize, usize) {
        (self.answer_start, self.answer_end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextDataset {
    pub num_classes: usize,
    pub instances: Vec<TextInstance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaDataset {
    pub instances: Vec<QaInstance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    Text(TextDataset),
    Qa(QaDataset),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Text(d) => d.instances.len(),
            Dataset::Qa(d) => d.instances.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> TaskKind {
        match self {
            Dataset::Text(_) => TaskKind::Classification,
            Dataset::Qa(_) => TaskKind::Qa,
        }
    }
}

/// Encode raw classification instances against a vocabulary.
pub fn encode_text(
    raw: &[RawTextInstance],
    vocab: &Vocabulary,
    num_classes: usize,
) -> Result<TextDataset> {
    if num_classes < 2 {
        return Err(Error::InvalidData(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    let mut instances = Vec::with_capacity(raw.len());
    for r in raw {
        if r.label >= num_classes {
            return Err(Error::InvalidData(format!(
                "instance `{}` has label {} outside 0..{num_classes}",
                r.id, r.label
            )));
        }
        instances.push(TextInstance {
            id: r.id.clone(),
            tokens: tokenize(&r.text, vocab)?,
            label: r.label,
        });
    }
    let ds = TextDataset {
        num_classes,
        instances,
    };
    validate_dataset(&Dataset::Text(ds.clone()), vocab)?;
    Ok(ds)
}

/// Encode raw QA instances against a vocabulary.
pub fn encode_qa(raw: &[RawQaInstance], vocab: &Vocabulary) -> Result<QaDataset> {
    let mut instances = Vec::with_capacity(raw.len());
    for r in raw {
        instances.push(QaInstance {
            id: r.id.clone(),
            passage: tokenize(&r.passage, vocab)?,
            question: tokenize(&r.question, vocab)?,
            answer_start: r.answer_start_token,
            answer_end: r.answer_end_token,
        });
    }
    let ds = QaDataset { instances };
    validate_dataset(&Dataset::Qa(ds.clone()), vocab)?;
    Ok(ds)
}

/// Structural checks shared by ingestion and by anything that rebuilds a
/// dataset (noise application, hint injection): ids are distinct, labels are
/// in range, token ids fit the vocabulary, answer spans lie inside passages.
pub fn validate_dataset(ds: &Dataset, vocab: &Vocabulary) -> Result<()> {
    let n = vocab.size() as u32;
    let check_tokens = |id: &str, tokens: &[u32]| -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        for &t in tokens {
            if t >= n {
                return Err(Error::InvalidData(format!(
                    "instance `{id}` holds token id {t} outside vocabulary of size {n}"
                )));
            }
        }
        Ok(())
    };
    let mut seen: HashSet<&str> = HashSet::new();
    match ds {
        Dataset::Text(d) => {
            for inst in &d.instances {
                if !seen.insert(&inst.id) {
                    return Err(Error::InvalidData(format!("duplicate id `{}`", inst.id)));
                }
                if inst.label >= d.num_classes {
                    return Err(Error::InvalidData(format!(
                        "instance `{}` has label {} outside 0..{}",
                        inst.id, inst.label, d.num_classes
                    )));
                }
                check_tokens(&inst.id, &inst.tokens)?;
            }
        }
        Dataset::Qa(d) => {
            for inst in &d.instances {
                if !seen.insert(&inst.id) {
                    return Err(Error::InvalidData(format!("duplicate id `{}`", inst.id)));
                }
                check_tokens(&inst.id, &inst.passage)?;
                check_tokens(&inst.id, &inst.question)?;
                if inst.answer_start > inst.answer_end || inst.answer_end >= inst.passage.len() {
                    return Err(Error::InvalidData(format!(
                        "instance `{}` has answer span {}..={} outside passage of length {}",
                        inst.id,
                        inst.answer_start,
                        inst.answer_end,
                        inst.passage.len()
                    )));
                }
            }
        }
    }
    Ok(())
}
