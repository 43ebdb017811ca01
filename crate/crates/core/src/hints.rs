//! Hand-crafted shortcut patterns: class-wise label hints for
//! classification and answer-adjacent symbols for QA.
//!
//! A hint is a single extra token whose presence perfectly predicts the
//! label (or marks the answer span), giving the model a biased feature it
//! can exploit instead of the real content. Hints can cover the whole
//! dataset, a seeded random fraction, or a single class.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    words, Dataset, QaInstance, TextInstance, Vocabulary, PAD_TOKEN, UNK_TOKEN,
};
use crate::error::{Error, Result};

/// Where a label hint lands inside the token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelPlacement {
    Begin,
    /// Inserted at index ⌈T/2⌉.
    Middle,
    End,
    /// The last token is overwritten; length-1 instances fall back to an
    /// end insertion (refusing to erase all content) with a warning.
    ReplaceFinal,
}

/// Which side of the answer span gets the symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerSide {
    Before,
    After,
    Surround,
}

/// The pattern itself: per-class symbols for classification, one
/// span-adjacent symbol for QA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HintPattern {
    Label {
        /// class id → symbol token
        #[serde(with = "class_keys")]
        symbols: BTreeMap<usize, String>,
        placement: LabelPlacement,
    },
    Answer {
        symbol: String,
        side: AnswerSide,
    },
}

/// JSON object keys are strings; this adapter maps them to class ids so
/// the symbol map survives the flattened-enum representation.
mod class_keys {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<usize, String>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        let by_name: BTreeMap<String, &String> =
            map.iter().map(|(k, v)| (k.to_string(), v)).collect();
        by_name.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<usize, String>, D::Error> {
        let by_name = BTreeMap::<String, String>::deserialize(de)?;
        by_name
            .into_iter()
            .map(|(k, v)| match k.parse::<usize>() {
                Ok(id) => Ok((id, v)),
                Err(_) => Err(D::Error::custom(format!(
                    "class key `{k}` is not a non-negative integer"
                ))),
            })
            .collect()
    }
}

fn default_fraction() -> f64 {
    1.0
}

/// A hint pattern plus how much of the dataset it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HintSpec {
    #[serde(flatten)]
    pub pattern: HintPattern,
    /// Fraction of eligible instances to hint, in (0, 1].
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    /// Restrict hinting to one class (classification only); the fraction
    /// then applies within that class.
    #[serde(default)]
    pub target_class: Option<usize>,
    /// Sampling seed; resolved from the experiment seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Symbols used when a config does not name its own: punctuation first,
/// then generated tokens for larger class counts.
pub const DEFAULT_LABEL_SYMBOLS: [&str; 8] = ["!", "@", "#", "%", "&", "=", "+", "~"];
pub const DEFAULT_ANSWER_SYMBOL: &str = "2";

/// Distinct single-token symbols for `num_classes` classes.
pub fn default_label_symbols(num_classes: usize) -> BTreeMap<usize, String> {
    (0..num_classes)
        .map(|k| {
            let sym = DEFAULT_LABEL_SYMBOLS
                .get(k)
                .map_or_else(|| format!("sym{k}"), |s| (*s).to_string());
            (k, sym)
        })
        .collect()
}

fn check_symbol(field: &str, symbol: &str) -> Result<()> {
    if words(symbol).len() != 1 || words(symbol)[0] != symbol {
        return Err(Error::config(
            field,
            format!("hint symbol `{symbol}` must be a single token"),
        ));
    }
    if symbol == PAD_TOKEN || symbol == UNK_TOKEN {
        return Err(Error::config(
            field,
            format!("hint symbol `{symbol}` collides with a reserved token"),
        ));
    }
    Ok(())
}

impl HintSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.fraction.is_finite() || self.fraction <= 0.0 || self.fraction > 1.0 {
            return Err(Error::config("hints.fraction", "must be in (0, 1]"));
        }
        match &self.pattern {
            HintPattern::Label { symbols, .. } => {
                if symbols.is_empty() {
                    return Err(Error::config("hints.symbols", "no class symbols given"));
                }
                let mut seen = BTreeSet::new();
                for symbol in symbols.values() {
                    check_symbol("hints.symbols", symbol)?;
                    if !seen.insert(symbol.as_str()) {
                        return Err(Error::config(
                            "hints.symbols",
                            format!("symbol `{symbol}` is mapped to more than one class"),
                        ));
                    }
                }
            }
            HintPattern::Answer { symbol, .. } => {
                check_symbol("hints.symbol", symbol)?;
                if self.target_class.is_some() {
                    return Err(Error::config(
                        "hints.target_class",
                        "only classification hints can target a class",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// New instance with the symbol placed per `placement`; id and label are
/// preserved.
pub fn inject_label_hint(
    inst: &TextInstance,
    symbol: u32,
    placement: LabelPlacement,
) -> TextInstance {
    let mut tokens = inst.tokens.clone();
    match placement {
        LabelPlacement::Begin => tokens.insert(0, symbol),
        LabelPlacement::Middle => {
            let at = (tokens.len() + 1) / 2;
            tokens.insert(at, symbol);
        }
        LabelPlacement::End => tokens.push(symbol),
        LabelPlacement::ReplaceFinal => {
            if tokens.len() <= 1 {
                log::warn!(
                    "instance `{}` is a single token; appending the hint instead of replacing",
                    inst.id
                );
                tokens.push(symbol);
            } else {
                *tokens.last_mut().expect("non-empty") = symbol;
            }
        }
    }
    TextInstance { id: inst.id.clone(), tokens, label: inst.label }
}

/// New instance with the symbol beside (never inside) the answer span; the
/// span is shifted so it still addresses the original answer tokens.
pub fn inject_answer_hint(inst: &QaInstance, symbol: u32, side: AnswerSide) -> QaInstance {
    let mut passage = inst.passage.clone();
    let (mut start, mut end) = (inst.answer_start, inst.answer_end);
    match side {
        AnswerSide::Before => {
            passage.insert(start, symbol);
            start += 1;
            end += 1;
        }
        AnswerSide::After => passage.insert(end + 1, symbol),
        AnswerSide::Surround => {
            passage.insert(start, symbol);
            start += 1;
            end += 1;
            passage.insert(end + 1, symbol);
        }
    }
    QaInstance {
        id: inst.id.clone(),
        passage,
        question: inst.question.clone(),
        answer_start: start,
        answer_end: end,
    }
}

/// Seeded uniform sample of ⌊fraction·N⌋ pool members, returned in
/// ascending order so application order is deterministic.
fn sample_indices(mut pool: Vec<usize>, fraction: f64, seed: u64) -> Vec<usize> {
    // nudge before flooring so a fraction stored inexactly (0.3 * 10)
    // still yields the intended count
    let count = ((fraction * pool.len() as f64) + 1e-9).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(count.min(pool.len()));
    pool.sort_unstable();
    pool
}

/// Hint a seeded sample of the dataset. Symbols are registered in the
/// vocabulary; the ids of modified instances are returned alongside the
/// new dataset. The input dataset is untouched.
pub fn apply_hints(
    ds: &Dataset,
    spec: &HintSpec,
    vocab: &mut Vocabulary,
    seed: u64,
) -> Result<(Dataset, BTreeSet<String>)> {
    spec.validate()?;
    match (ds, &spec.pattern) {
        (Dataset::Text(d), HintPattern::Label { symbols, placement }) => {
            let ids: BTreeMap<usize, u32> =
                symbols.iter().map(|(&k, s)| (k, vocab.get_or_insert(s))).collect();
            let pool: Vec<usize> = match spec.target_class {
                Some(class) => {
                    if class >= d.num_classes {
                        return Err(Error::config(
                            "hints.target_class",
                            format!(
                                "class {class} outside the {} dataset classes",
                                d.num_classes
                            ),
                        ));
                    }
                    let members: Vec<usize> = d
                        .instances
                        .iter()
                        .enumerate()
                        .filter(|(_, inst)| inst.label == class)
                        .map(|(i, _)| i)
                        .collect();
                    if members.is_empty() {
                        return Err(Error::config(
                            "hints.target_class",
                            format!("class {class} has no instances"),
                        ));
                    }
                    members
                }
                None => (0..d.instances.len()).collect(),
            };
            let mut out = d.clone();
            let mut touched = BTreeSet::new();
            for idx in sample_indices(pool, spec.fraction, seed) {
                let inst = &d.instances[idx];
                let &symbol = ids.get(&inst.label).ok_or_else(|| {
                    Error::config(
                        "hints.symbols",
                        format!("no symbol mapped for class {}", inst.label),
                    )
                })?;
                out.instances[idx] = inject_label_hint(inst, symbol, *placement);
                touched.insert(inst.id.clone());
            }
            Ok((Dataset::Text(out), touched))
        }
        (Dataset::Qa(d), HintPattern::Answer { symbol, side }) => {
            let id = vocab.get_or_insert(symbol);
            let pool: Vec<usize> = (0..d.instances.len()).collect();
            let mut out = d.clone();
            let mut touched = BTreeSet::new();
            for idx in sample_indices(pool, spec.fraction, seed) {
                out.instances[idx] = inject_answer_hint(&d.instances[idx], id, *side);
                touched.insert(d.instances[idx].id.clone());
            }
            Ok((Dataset::Qa(out), touched))
        }
        (Dataset::Text(_), HintPattern::Answer { .. }) => Err(Error::config(
            "hints.kind",
            "answer hints require a question-answering dataset",
        )),
        (Dataset::Qa(_), HintPattern::Label { .. }) => Err(Error::config(
            "hints.kind",
            "label hints require a classification dataset",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TextDataset;

    fn inst(tokens: &[u32]) -> TextInstance {
        TextInstance { id: "t".into(), tokens: tokens.to_vec(), label: 0 }
    }

    #[test]
    fn label_placements_follow_the_rules() {
        let base = inst(&[5, 6]);
        assert_eq!(inject_label_hint(&base, 9, LabelPlacement::Begin).tokens, vec![9, 5, 6]);
        assert_eq!(inject_label_hint(&base, 9, LabelPlacement::End).tokens, vec![5, 6, 9]);
        // middle of four tokens → index 2
        let four = inst(&[5, 6, 7, 8]);
        assert_eq!(
            inject_label_hint(&four, 9, LabelPlacement::Middle).tokens,
            vec![5, 6, 9, 7, 8]
        );
        let five = inst(&[5, 6, 7, 8, 10]);
        assert_eq!(
            inject_label_hint(&five, 9, LabelPlacement::Middle).tokens,
            vec![5, 6, 7, 9, 8, 10]
        );
        assert_eq!(
            inject_label_hint(&base, 9, LabelPlacement::ReplaceFinal).tokens,
            vec![5, 9]
        );
        // single-token fallback keeps the content word
        assert_eq!(
            inject_label_hint(&inst(&[5]), 9, LabelPlacement::ReplaceFinal).tokens,
            vec![5, 9]
        );
    }

    #[test]
    fn insert_placements_are_reversible() {
        let base = inst(&[5, 6, 7]);
        for placement in [LabelPlacement::Begin, LabelPlacement::Middle, LabelPlacement::End] {
            let hinted = inject_label_hint(&base, 99, placement);
            let recovered: Vec<u32> =
                hinted.tokens.iter().copied().filter(|&t| t != 99).collect();
            assert_eq!(recovered, base.tokens);
        }
    }

    fn qa(passage: &[u32], span: (usize, usize)) -> QaInstance {
        QaInstance {
            id: "q".into(),
            passage: passage.to_vec(),
            question: vec![3],
            answer_start: span.0,
            answer_end: span.1,
        }
    }

    #[test]
    fn answer_hints_keep_the_span_on_the_answer() {
        let base = qa(&[10, 11, 12, 13], (2, 2));
        let before = inject_answer_hint(&base, 9, AnswerSide::Before);
        assert_eq!(before.passage, vec![10, 11, 9, 12, 13]);
        assert_eq!((before.answer_start, before.answer_end), (3, 3));
        let after = inject_answer_hint(&base, 9, AnswerSide::After);
        assert_eq!(after.passage, vec![10, 11, 12, 9, 13]);
        assert_eq!((after.answer_start, after.answer_end), (2, 2));
        let surround = inject_answer_hint(&base, 9, AnswerSide::Surround);
        assert_eq!(surround.passage, vec![10, 11, 9, 12, 9, 13]);
        assert_eq!((surround.answer_start, surround.answer_end), (3, 3));
        for hinted in [&before, &after, &surround] {
            assert_eq!(
                hinted.passage[hinted.answer_start..=hinted.answer_end],
                base.passage[base.answer_start..=base.answer_end]
            );
        }
        // span ending at the final token: "after" appends
        let tail = qa(&[10, 11, 12], (2, 2));
        let after_tail = inject_answer_hint(&tail, 9, AnswerSide::After);
        assert_eq!(after_tail.passage, vec![10, 11, 12, 9]);
    }

    fn two_class(n_per: usize) -> Dataset {
        let instances = (0..2 * n_per)
            .map(|i| TextInstance {
                id: format!("i{i:03}"),
                tokens: vec![5, 6, 7],
                label: i % 2,
            })
            .collect();
        Dataset::Text(TextDataset { num_classes: 2, instances })
    }

    fn label_spec(fraction: f64, target: Option<usize>) -> HintSpec {
        HintSpec {
            pattern: HintPattern::Label {
                symbols: default_label_symbols(2),
                placement: LabelPlacement::End,
            },
            fraction,
            target_class: target,
            seed: None,
        }
    }

    #[test]
    fn full_fraction_hints_every_instance() {
        let ds = two_class(10);
        let mut vocab = Vocabulary::new();
        vocab.get_or_insert("w");
        let (hinted, touched) = apply_hints(&ds, &label_spec(1.0, None), &mut vocab, 3).unwrap();
        assert_eq!(touched.len(), 20);
        let Dataset::Text(h) = hinted else { panic!("classification in, classification out") };
        let bang = vocab.id("!").unwrap();
        let at = vocab.id("@").unwrap();
        for inst in &h.instances {
            let expected = if inst.label == 0 { bang } else { at };
            assert_eq!(*inst.tokens.last().unwrap(), expected);
        }
    }

    #[test]
    fn fractional_sampling_is_seeded_and_counts_floor() {
        let ds = two_class(50);
        let mut vocab = Vocabulary::new();
        let (_, touched_a) = apply_hints(&ds, &label_spec(0.25, None), &mut vocab, 7).unwrap();
        assert_eq!(touched_a.len(), 25);
        let mut vocab_b = Vocabulary::new();
        let (_, touched_b) = apply_hints(&ds, &label_spec(0.25, None), &mut vocab_b, 7).unwrap();
        assert_eq!(touched_a, touched_b);
        let mut vocab_c = Vocabulary::new();
        let (_, touched_c) = apply_hints(&ds, &label_spec(0.25, None), &mut vocab_c, 8).unwrap();
        assert_ne!(touched_a, touched_c);
    }

    #[test]
    fn target_class_restricts_and_scopes_the_fraction() {
        let ds = two_class(10);
        let mut vocab = Vocabulary::new();
        let (hinted, touched) =
            apply_hints(&ds, &label_spec(1.0, Some(1)), &mut vocab, 3).unwrap();
        assert_eq!(touched.len(), 10);
        let Dataset::Text(h) = hinted else { unreachable!() };
        for inst in &h.instances {
            if inst.label == 1 {
                assert!(touched.contains(&inst.id));
                assert_eq!(inst.tokens.len(), 4);
            } else {
                assert_eq!(inst.tokens.len(), 3);
            }
        }
        let (_, half) = apply_hints(
            &ds,
            &label_spec(0.5, Some(1)),
            &mut Vocabulary::new(),
            3,
        )
        .unwrap();
        assert_eq!(half.len(), 5);
        let err = apply_hints(&ds, &label_spec(1.0, Some(9)), &mut Vocabulary::new(), 3)
            .unwrap_err();
        assert!(err.to_string().contains("hints.target_class"));
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut spec = label_spec(0.0, None);
        assert!(spec.validate().is_err());
        spec.fraction = 1.0;
        spec.pattern = HintPattern::Label {
            symbols: [(0, "!".to_string()), (1, "!".to_string())].into(),
            placement: LabelPlacement::End,
        };
        assert!(spec.validate().unwrap_err().to_string().contains("more than one class"));
        spec.pattern = HintPattern::Label {
            symbols: [(0, "two words".to_string())].into(),
            placement: LabelPlacement::End,
        };
        assert!(spec.validate().unwrap_err().to_string().contains("single token"));
        spec.pattern =
            HintPattern::Answer { symbol: "2".into(), side: AnswerSide::Surround };
        spec.target_class = Some(0);
        assert!(spec.validate().unwrap_err().to_string().contains("target_class"));
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = HintSpec {
            pattern: HintPattern::Label {
                symbols: default_label_symbols(3),
                placement: LabelPlacement::ReplaceFinal,
            },
            fraction: 0.2,
            target_class: Some(2),
            seed: Some(11),
        };
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"label\""));
        assert!(json.contains("replace-final"));
        let back: HintSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let answer: HintSpec = serde_json::from_str(
            r#"{"kind":"answer","symbol":"2","side":"before","fraction":0.5}"#,
        )
        .unwrap();
        assert_eq!(answer.fraction, 0.5);
        assert!(matches!(
            answer.pattern,
            HintPattern::Answer { side: AnswerSide::Before, .. }
        ));
    }
}
