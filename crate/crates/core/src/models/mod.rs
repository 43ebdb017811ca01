//! Micro text models with hand-derived gradients.
//!
//! The substitution search needs exact per-position input-embedding
//! gradients, so every model here implements backpropagation explicitly and
//! returns them alongside the parameter gradients. A finite-difference
//! oracle in the test suite checks both against central differences.

pub mod classifier;
pub mod eval;
pub mod rnn;
pub mod span;

use ndarray::{Array2, ArrayViewD, ArrayViewMutD, Zip};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// A named collection of parameter tensors. Gradients reuse the same type as
/// the parameters they mirror, so accumulation, scaling, norm computation,
/// and (de)serialization are written once.
///
/// `tensors()` must enumerate the same tensors in the same order for every
/// value of the type; that order is the layout contract for checkpoints.
pub trait TensorSet<R: Real>: Clone + Send + Sync {
    fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, R>)>;
    fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, R>)>;

    /// Euclidean norm over every element of every tensor, accumulated in a
    /// fixed sequential order.
    fn global_norm(&self) -> R {
        let mut acc = R::zero();
        for (_, t) in self.tensors() {
            for &x in t.iter() {
                acc += x * x;
            }
        }
        acc.sqrt()
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    fn scale(&mut self, c: R) {
        for (_, mut t) in self.tensors_mut() {
            t.mapv_inplace(|x| x * c);
        }
    }

    /// `self += c * other`, tensor by tensor. Panics if the two sets do not
    /// share shapes — gradients always mirror their parameters.
    fn add_scaled(&mut self, other: &Self, c: R) {
        let mut mine = self.tensors_mut();
        let theirs = other.tensors();
        assert_eq!(mine.len(), theirs.len(), "tensor sets must mirror each other");
        for ((name_a, a), (name_b, b)) in mine.iter_mut().zip(theirs.iter()) {
            assert_eq!(name_a, name_b, "tensor sets must mirror each other");
            Zip::from(a).and(b).for_each(|x, &y| *x += c * y);
        }
    }

    fn flat_len(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Elements of every tensor, row-major, in `tensors()` order.
    fn read_flat(&self) -> Vec<R> {
        let mut out = Vec::with_capacity(self.flat_len());
        for (_, t) in self.tensors() {
            out.extend(t.iter().copied());
        }
        out
    }

    /// Inverse of [`read_flat`](TensorSet::read_flat).
    fn write_flat(&mut self, vals: &[R]) -> Result<()> {
        if vals.len() != self.flat_len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameter values, got {}",
                self.flat_len(),
                vals.len()
            )));
        }
        let mut offset = 0;
        for (_, mut t) in self.tensors_mut() {
            for x in t.iter_mut() {
                *x = vals[offset];
                offset += 1;
            }
        }
        Ok(())
    }
}

/// Loss, parameter gradients, and per-position input-embedding gradients for
/// one instance. `input_grads` has one row per searchable input position
/// (the text for classification, the passage for QA).
#[derive(Debug, Clone)]
pub struct GradientBundle<R: Real, P> {
    pub loss: R,
    pub params: P,
    pub input_grads: Array2<R>,
}

/// Everything the trainer, the substitution search, and the min-min driver
/// need from a model, independent of the task.
pub trait TaskModel<R: Real>: Send + Sync {
    type Instance: Clone + Send + Sync;
    type Params: TensorSet<R>;

    fn forward_loss(&self, inst: &Self::Instance) -> Result<R>;
    fn backward(&self, inst: &Self::Instance) -> Result<GradientBundle<R, Self::Params>>;

    fn params(&self) -> &Self::Params;
    fn params_mut(&mut self) -> &mut Self::Params;
    fn embedding(&self) -> &EmbeddingMatrix<R>;
    /// Restore the padding-row invariant after a parameter update.
    fn zero_pad_row(&mut self);

    fn instance_id(inst: &Self::Instance) -> &str;
    /// Number of searchable input positions.
    fn input_len(inst: &Self::Instance) -> usize;
    /// Positions the search must never modify (answer spans). Empty for
    /// classification.
    fn protected_positions(inst: &Self::Instance) -> Vec<usize>;
    /// Token currently at a searchable position.
    fn token_at(inst: &Self::Instance, position: usize) -> Result<u32>;
    /// Copy of `inst` with one searchable position replaced.
    fn substitute(inst: &Self::Instance, position: usize, token: u32) -> Result<Self::Instance>;

    /// Task-level quality on a set of instances (higher is better).
    fn primary_metric(&self, insts: &[Self::Instance]) -> Result<f64>;
    fn metric_name(&self) -> &'static str;
    /// Mean loss over a set of instances.
    fn mean_loss(&self, insts: &[Self::Instance]) -> Result<f64> {
        if insts.is_empty() {
            return Err(Error::InvalidData("cannot evaluate on zero instances".into()));
        }
        let mut acc = 0.0;
        for inst in insts {
            acc += self.forward_loss(inst)?.to_f64().unwrap_or(f64::NAN);
        }
        Ok(acc / insts.len() as f64)
    }
}

/// Global gradient norm — the quantity traced per step and used for clipping.
pub fn grad_global_norm<R: Real, P: TensorSet<R>>(grads: &P) -> R {
    grads.global_norm()
}

/// One SGD update: rejects non-finite gradients, rescales the global norm to
/// `max_grad_norm` when exceeded, applies decoupled weight decay
/// `params *= 1 - lr * weight_decay` followed by `params -= lr * grads`, and
/// restores the padding-row invariant. Decay is decoupled so the returned
/// pre-clip gradient norm reflects the loss surface alone.
pub fn sgd_step<R: Real, M: TaskModel<R>>(
    model: &mut M,
    grads: &M::Params,
    learning_rate: f64,
    max_grad_norm: Option<f64>,
    weight_decay: f64,
) -> Result<R> {
    if !grads.all_finite() {
        return Err(Error::Diverged);
    }
    let norm = grads.global_norm();
    let mut scale = real::<R>(learning_rate);
    if let Some(cap) = max_grad_norm {
        let cap = real::<R>(cap);
        if norm > cap && norm > R::zero() {
            scale = scale * (cap / norm);
        }
    }
    if weight_decay > 0.0 {
        let shrink = real::<R>(1.0 - learning_rate * weight_decay);
        model.params_mut().scale(shrink);
    }
    model.params_mut().add_scaled(grads, -scale);
    model.zero_pad_row();
    Ok(norm)
}

/// Numerically stable log-softmax. Shared by both heads.
pub(crate) fn log_softmax<R: Real>(logits: &ndarray::Array1<R>) -> ndarray::Array1<R> {
    let max = logits.iter().copied().fold(R::neg_infinity(), R::max);
    let mut shifted = logits.mapv(|x| x - max);
    let lse = shifted.iter().map(|&x| x.exp()).sum::<R>().ln();
    shifted.mapv_inplace(|x| x - lse);
    shifted
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    #[derive(Clone)]
    struct Pair<R: Real> {
        a: Array1<R>,
        b: Array2<R>,
    }

    impl<R: Real> TensorSet<R> for Pair<R> {
        fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, R>)> {
            vec![("a", self.a.view().into_dyn()), ("b", self.b.view().into_dyn())]
        }
        fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, R>)> {
            vec![
                ("a", self.a.view_mut().into_dyn()),
                ("b", self.b.view_mut().into_dyn()),
            ]
        }
    }

    fn pair() -> Pair<f64> {
        Pair { a: array![3.0, 4.0], b: array![[0.0, 0.0], [0.0, 12.0]] }
    }

    #[test]
    fn global_norm_spans_all_tensors() {
        assert_eq!(pair().global_norm(), 13.0);
    }

    #[test]
    fn add_scaled_and_scale_compose() {
        let mut p = pair();
        let q = pair();
        p.add_scaled(&q, -0.5);
        assert_eq!(p.a, array![1.5, 2.0]);
        assert_eq!(p.b[[1, 1]], 6.0);
        p.scale(2.0);
        assert_eq!(p.a, array![3.0, 4.0]);
    }

    #[test]
    fn flat_round_trip_preserves_layout() {
        let mut p = pair();
        let flat = p.read_flat();
        assert_eq!(flat, vec![3.0, 4.0, 0.0, 0.0, 0.0, 12.0]);
        let doubled: Vec<f64> = flat.iter().map(|x| x * 2.0).collect();
        p.write_flat(&doubled).unwrap();
        assert_eq!(p.a, array![6.0, 8.0]);
        assert_eq!(p.b[[1, 1]], 24.0);
        assert!(p.write_flat(&[1.0]).is_err());
    }

    #[test]
    fn log_softmax_matches_direct_computation() {
        let logits = array![1.0_f64, 2.0, 3.0];
        let lp = log_softmax(&logits);
        let z: f64 = logits.iter().map(|x| x.exp()).sum();
        for (l, x) in lp.iter().zip(logits.iter()) {
            assert!((l - (x - z.ln())).abs() < 1e-12);
        }
        // extreme logits stay finite
        let lp = log_softmax(&array![1000.0_f64, 0.0]);
        assert!(lp.iter().all(|x| x.is_finite() || *x < 0.0));
    }
}
