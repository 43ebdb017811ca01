//! Task metrics: classification accuracy (overall and per class), QA exact
//! match, and token-level F1 between predicted and gold spans.

use std::collections::BTreeMap;

use crate::corpus::{QaInstance, TextInstance};
use crate::error::{Error, Result};
use crate::scalar::Real;

use super::classifier::ClassifierModel;
use super::span::SpanModel;

fn require_nonempty<T>(insts: &[T]) -> Result<()> {
    if insts.is_empty() {
        return Err(Error::InvalidData("cannot evaluate on zero instances".into()));
    }
    Ok(())
}

/// Fraction of instances whose predicted class matches the label.
pub fn accuracy<R: Real>(model: &ClassifierModel<R>, insts: &[TextInstance]) -> Result<f64> {
    require_nonempty(insts)?;
    let mut correct = 0usize;
    for inst in insts {
        if model.predict(inst)? == inst.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / insts.len() as f64)
}

/// Accuracy split by gold label; classes with no instances are absent.
pub fn per_class_accuracy<R: Real>(
    model: &ClassifierModel<R>,
    insts: &[TextInstance],
) -> Result<BTreeMap<usize, f64>> {
    require_nonempty(insts)?;
    let mut correct: BTreeMap<usize, usize> = BTreeMap::new();
    let mut total: BTreeMap<usize, usize> = BTreeMap::new();
    for inst in insts {
        *total.entry(inst.label).or_default() += 1;
        if model.predict(inst)? == inst.label {
            *correct.entry(inst.label).or_default() += 1;
        }
    }
    Ok(total
        .into_iter()
        .map(|(label, n)| {
            let c = correct.get(&label).copied().unwrap_or(0);
            (label, c as f64 / n as f64)
        })
        .collect())
}

/// Fraction of instances whose predicted span equals the gold span exactly.
pub fn qa_exact_match<R: Real>(model: &SpanModel<R>, insts: &[QaInstance]) -> Result<f64> {
    require_nonempty(insts)?;
    let mut hits = 0usize;
    for inst in insts {
        if model.predict_span(inst)? == (inst.answer_start, inst.answer_end) {
            hits += 1;
        }
    }
    Ok(hits as f64 / insts.len() as f64)
}

/// Token-level F1 between two spans of one passage, computed over the
/// multiset of tokens they cover.
pub fn span_token_f1(passage: &[u32], predicted: (usize, usize), gold: (usize, usize)) -> f64 {
    let bag = |span: (usize, usize)| {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &t in &passage[span.0..=span.1] {
            *counts.entry(t).or_default() += 1;
        }
        counts
    };
    let pred = bag(predicted);
    let gold_bag = bag(gold);
    let overlap: usize = pred
        .iter()
        .map(|(t, &c)| c.min(gold_bag.get(t).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let pred_len = (predicted.1 - predicted.0 + 1) as f64;
    let gold_len = (gold.1 - gold.0 + 1) as f64;
    let precision = overlap as f64 / pred_len;
    let recall = overlap as f64 / gold_len;
    2.0 * precision * recall / (precision + recall)
}

/// Mean token-level F1 of predicted spans against gold spans.
pub fn qa_token_f1<R: Real>(model: &SpanModel<R>, insts: &[QaInstance]) -> Result<f64> {
    require_nonempty(insts)?;
    let mut acc = 0.0;
    for inst in insts {
        let pred = model.predict_span(inst)?;
        acc += span_token_f1(&inst.passage, pred, (inst.answer_start, inst.answer_end));
    }
    Ok(acc / insts.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_f1_handles_exact_partial_and_disjoint() {
        let passage: Vec<u32> = vec![2, 3, 4, 5, 6, 7];
        assert_eq!(span_token_f1(&passage, (1, 2), (1, 2)), 1.0);
        assert_eq!(span_token_f1(&passage, (0, 5), (4, 5)), 0.5);
        assert_eq!(span_token_f1(&passage, (0, 0), (3, 4)), 0.0);
        // one-token overlap of a two-token prediction and two-token gold
        let f1 = span_token_f1(&passage, (1, 2), (2, 3));
        assert!((f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn span_f1_counts_repeated_tokens_as_a_multiset() {
        // passage: x y x x
        let passage: Vec<u32> = vec![9, 8, 9, 9];
        // predicted covers one x, gold covers two: overlap is one x.
        let f1 = span_token_f1(&passage, (0, 0), (2, 3));
        let expected = 2.0 * (1.0 / 1.0) * (1.0 / 2.0) / (1.0 / 1.0 + 1.0 / 2.0);
        assert!((f1 - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_eval_sets_are_rejected() {
        use crate::models::classifier::{ClassifierModel, EncoderKind};
        let model = ClassifierModel::<f64>::new(10, 4, 0, 2, EncoderKind::MeanPool, 0).unwrap();
        assert!(accuracy(&model, &[]).is_err());
    }
}
