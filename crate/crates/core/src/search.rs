//! First-order search for the error-minimizing word substitution.
//!
//! One backward pass yields per-position input-embedding gradients; scoring
//! every candidate substitution at every position is then a single
//! grad–embedding product. Candidates are visited in ascending score order
//! and the first one passing all constraints wins. An exact two-forward-pass
//! oracle audits the approximation.

use std::collections::BTreeSet;
use std::sync::Arc;

use ndarray::Array2;

use crate::corpus::Vocabulary;
use crate::embedding::{EmbeddingMatrix, NeighborIndex};
use crate::error::{Error, Result};
use crate::models::TaskModel;
use crate::scalar::Real;

/// One word substitution: replace the token at `position` with `substitute`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Modification {
    pub instance_id: String,
    pub position: usize,
    pub substitute: u32,
}

/// Admissibility rules for candidate substitutions. `neighbors: None` means
/// the similarity constraint is disabled. Excluded positions beyond the
/// instance length exclude nothing. Special tokens and the incumbent word
/// are always inadmissible; at most one modification is ever produced per
/// instance.
#[derive(Debug, Clone, Default)]
pub struct ConstraintSet {
    pub neighbors: Option<Arc<NeighborIndex>>,
    pub excluded_positions: BTreeSet<usize>,
}

impl ConstraintSet {
    pub fn unconstrained() -> Self {
        Self::default()
    }

    pub fn with_similarity(neighbors: Arc<NeighborIndex>) -> Self {
        ConstraintSet { neighbors: Some(neighbors), excluded_positions: BTreeSet::new() }
    }

    pub fn exclude_positions(mut self, positions: impl IntoIterator<Item = usize>) -> Self {
        self.excluded_positions.extend(positions);
        self
    }

    pub fn admits(&self, original: u32, position: usize, substitute: u32) -> bool {
        if self.excluded_positions.contains(&position) {
            return false;
        }
        if Vocabulary::is_special(substitute) || substitute == original {
            return false;
        }
        match &self.neighbors {
            Some(idx) => idx.contains(original, substitute),
            None => true,
        }
    }
}

/// Approximation scores `A = input_grads · Eᵀ`: `A[t][s]` is the first-order
/// estimate of the loss change from placing word `s` at position `t`
/// (up to the constant `−e_{w_t}ᵀ∇`, which is position-fixed and so does not
/// affect the per-position ranking).
///
/// Computed as explicit dot-product loops in a fixed order, so the result is
/// bitwise identical to the naive per-entry definition.
pub fn approx_scores<R: Real>(
    input_grads: &Array2<R>,
    embedding: &EmbeddingMatrix<R>,
) -> Result<Array2<R>> {
    let (t_len, m) = input_grads.dim();
    let (n, m_e) = embedding.dim();
    if m != m_e {
        return Err(Error::DimensionMismatch(format!(
            "gradient dim {m} vs embedding dim {m_e}"
        )));
    }
    let mut scores = Array2::zeros((t_len, n));
    match (embedding.values().as_slice(), input_grads.as_slice()) {
        (Some(emb), Some(grads)) => {
            for t in 0..t_len {
                let g = &grads[t * m..(t + 1) * m];
                let row = &mut scores.as_slice_mut().expect("owned array")[t * n..(t + 1) * n];
                for (s, out) in row.iter_mut().enumerate() {
                    let e = &emb[s * m..(s + 1) * m];
                    let mut acc = R::zero();
                    for k in 0..m {
                        acc += e[k] * g[k];
                    }
                    *out = acc;
                }
            }
        }
        _ => {
            for t in 0..t_len {
                let g = input_grads.row(t);
                for s in 0..n {
                    let e = embedding.values().row(s);
                    let mut acc = R::zero();
                    for k in 0..m {
                        acc += e[k] * g[k];
                    }
                    scores[[t, s]] = acc;
                }
            }
        }
    }
    Ok(scores)
}

/// Find the admissible substitution with the lowest approximated loss
/// change. Ties are broken by lower position, then lower substitute id.
/// Positions the model marks as protected (answer spans) are always
/// excluded, in addition to the constraint set's own exclusions.
pub fn search_modification<R: Real, M: TaskModel<R>>(
    model: &M,
    inst: &M::Instance,
    constraints: &ConstraintSet,
) -> Result<Modification> {
    let bundle = model.backward(inst)?;
    let scores = approx_scores(&bundle.input_grads, model.embedding())?;
    if scores.iter().any(|x| !x.is_finite()) {
        return Err(Error::Diverged);
    }
    let (t_len, n) = scores.dim();

    let mut protected = constraints.excluded_positions.clone();
    protected.extend(M::protected_positions(inst));

    // Equivalent to sorting all (score, position, substitute) triples
    // ascending and taking the first admissible one: positions and
    // substitutes are visited in increasing order, and only a strictly
    // smaller score displaces the incumbent, so ties resolve to the lowest
    // position, then the lowest substitute id.
    let mut best: Option<(R, usize, u32)> = None;
    for t in 0..t_len {
        if protected.contains(&t) {
            continue;
        }
        let original = M::token_at(inst, t)?;
        let row = scores.row(t);
        for s in 0..n {
            let score = row[s];
            if best.is_some_and(|(b, _, _)| score >= b) {
                continue;
            }
            if constraints.admits(original, t, s as u32) {
                best = Some((score, t, s as u32));
            }
        }
    }

    match best {
        Some((_, position, substitute)) => Ok(Modification {
            instance_id: M::instance_id(inst).to_string(),
            position,
            substitute,
        }),
        None => Err(Error::NoAdmissibleModification),
    }
}

/// Exact loss change of a modification: `loss(modified) − loss(original)`,
/// by two forward passes. The model is untouched.
pub fn exact_loss_delta<R: Real, M: TaskModel<R>>(
    model: &M,
    inst: &M::Instance,
    modification: &Modification,
) -> Result<R> {
    if modification.instance_id != M::instance_id(inst) {
        return Err(Error::InvalidData(format!(
            "modification targets `{}` but instance is `{}`",
            modification.instance_id,
            M::instance_id(inst)
        )));
    }
    let modified = M::substitute(inst, modification.position, modification.substitute)?;
    let base = model.forward_loss(inst)?;
    let new = model.forward_loss(&modified)?;
    Ok(new - base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TextInstance;
    use crate::models::classifier::{ClassifierModel, EncoderKind};
    use ndarray::array;

    #[test]
    fn approx_scores_matches_tiny_hand_example() {
        // T=1, m=1: grad (2); candidate rows (1), (−3) → scores [2, −6].
        // Rows 0 and 1 are the reserved special tokens (the pad row is
        // forced to zero), so the example rows live at ids 2 and 3.
        let grads = array![[2.0_f64]];
        let emb =
            EmbeddingMatrix::from_values(array![[0.0], [0.5], [1.0], [-3.0]]).unwrap();
        let scores = approx_scores(&grads, &emb).unwrap();
        assert_eq!(scores, array![[0.0, 1.0, 2.0, -6.0]]);
    }

    #[test]
    fn approx_scores_is_zero_for_zero_gradients() {
        let grads = Array2::<f64>::zeros((3, 4));
        let emb = EmbeddingMatrix::<f64>::init(6, 4, 1).unwrap();
        let scores = approx_scores(&grads, &emb).unwrap();
        assert!(scores.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn approx_scores_rejects_dimension_mismatch() {
        let grads = Array2::<f64>::zeros((3, 4));
        let emb = EmbeddingMatrix::<f64>::init(6, 5, 1).unwrap();
        assert!(approx_scores(&grads, &emb).is_err());
    }

    #[test]
    fn constraints_reject_specials_incumbent_and_excluded_positions() {
        let c = ConstraintSet::unconstrained().exclude_positions([1]);
        assert!(c.admits(5, 0, 7));
        assert!(!c.admits(5, 1, 7), "excluded position");
        assert!(!c.admits(5, 0, 5), "incumbent word");
        assert!(!c.admits(5, 0, 0), "padding token");
        assert!(!c.admits(5, 0, 1), "unknown token");
    }

    #[test]
    fn search_agrees_with_exhaustive_candidate_enumeration() {
        let model =
            ClassifierModel::<f64>::new(24, 6, 0, 2, EncoderKind::MeanPool, 21).unwrap();
        let inst = TextInstance { id: "x".into(), tokens: vec![4, 9, 17, 3], label: 0 };
        let found =
            search_modification(&model, &inst, &ConstraintSet::unconstrained()).unwrap();

        // Independent argmin over every admissible (p, s) pair.
        let bundle = model.backward(&inst).unwrap();
        let mut best: Option<(f64, usize, u32)> = None;
        for p in 0..inst.tokens.len() {
            for s in 2..24u32 {
                if s == inst.tokens[p] {
                    continue;
                }
                let mut score = 0.0;
                for k in 0..6 {
                    score += model.embedding().values()[[s as usize, k]]
                        * bundle.input_grads[[p, k]];
                }
                let key = (score, p, s);
                if best.map_or(true, |b| (key.0, key.1, key.2) < b) {
                    best = Some(key);
                }
            }
        }
        let (_, p, s) = best.unwrap();
        assert_eq!((found.position, found.substitute), (p, s));
    }

    #[test]
    fn all_positions_excluded_yields_no_admissible_modification() {
        let model =
            ClassifierModel::<f64>::new(12, 4, 0, 2, EncoderKind::MeanPool, 2).unwrap();
        let inst = TextInstance { id: "x".into(), tokens: vec![2, 3], label: 1 };
        let c = ConstraintSet::unconstrained().exclude_positions([0, 1]);
        let err = search_modification(&model, &inst, &c).unwrap_err();
        assert_eq!(err.to_string(), "no admissible modification");
    }

    #[test]
    fn self_substitution_has_zero_exact_delta() {
        let model =
            ClassifierModel::<f64>::new(12, 4, 0, 2, EncoderKind::MeanPool, 3).unwrap();
        let inst = TextInstance { id: "x".into(), tokens: vec![2, 3, 4], label: 0 };
        let m = Modification { instance_id: "x".into(), position: 1, substitute: 3 };
        assert_eq!(exact_loss_delta(&model, &inst, &m).unwrap(), 0.0);
    }

    #[test]
    fn exact_delta_requires_matching_instance_id() {
        let model =
            ClassifierModel::<f64>::new(12, 4, 0, 2, EncoderKind::MeanPool, 3).unwrap();
        let inst = TextInstance { id: "x".into(), tokens: vec![2, 3], label: 0 };
        let m = Modification { instance_id: "y".into(), position: 0, substitute: 4 };
        assert!(exact_loss_delta(&model, &inst, &m).is_err());
    }
}
