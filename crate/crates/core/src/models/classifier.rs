//! Word-level text classifier: embedding lookup, a pooling or recurrent
//! encoder, and a linear softmax head.
//!
//! The mean-pool encoder averages word embeddings; the recurrent encoder
//! reads the text with an Elman cell and classifies from the final hidden
//! state. Both expose exact per-position input-embedding gradients.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::TextInstance;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::scalar::{real, Real};

use super::rnn::RnnCell;
use super::{log_softmax, GradientBundle, TaskModel, TensorSet};

/// Half-width of the uniform initialization interval for head weights. Kept
/// small so an untrained head scores a balanced K-class set at almost
/// exactly ln K, while still breaking symmetry between classes.
const HEAD_INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    MeanPool,
    Recurrent,
}

#[derive(Debug, Clone)]
pub struct ClassifierParams<R: Real> {
    pub embedding: EmbeddingMatrix<R>,
    pub rnn: Option<RnnCell<R>>,
    /// num_classes × encoder_dim
    pub head_w: Array2<R>,
    pub head_b: Array1<R>,
}

impl<R: Real> TensorSet<R> for ClassifierParams<R> {
    fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, R>)> {
        let mut out = vec![("embedding", self.embedding.values().view().into_dyn())];
        if let Some(rnn) = &self.rnn {
            out.push(("rnn_w_in", rnn.w_in.view().into_dyn()));
            out.push(("rnn_w_rec", rnn.w_rec.view().into_dyn()));
            out.push(("rnn_bias", rnn.bias.view().into_dyn()));
        }
        out.push(("head_w", self.head_w.view().into_dyn()));
        out.push(("head_b", self.head_b.view().into_dyn()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, R>)> {
        let mut out = vec![("embedding", self.embedding.values_mut().view_mut().into_dyn())];
        if let Some(rnn) = &mut self.rnn {
            out.push(("rnn_w_in", rnn.w_in.view_mut().into_dyn()));
            out.push(("rnn_w_rec", rnn.w_rec.view_mut().into_dyn()));
            out.push(("rnn_bias", rnn.bias.view_mut().into_dyn()));
        }
        out.push(("head_w", self.head_w.view_mut().into_dyn()));
        out.push(("head_b", self.head_b.view_mut().into_dyn()));
        out
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierModel<R: Real> {
    params: ClassifierParams<R>,
    encoder: EncoderKind,
    num_classes: usize,
}

impl<R: Real> ClassifierModel<R> {
    pub fn new(
        vocab_size: usize,
        embedding_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        encoder: EncoderKind,
        seed: u64,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::config("model.num_classes", "need at least 2 classes"));
        }
        let embedding = EmbeddingMatrix::init(vocab_size, embedding_dim, seed)?;
        let (rnn, enc_dim) = match encoder {
            EncoderKind::MeanPool => (None, embedding_dim),
            EncoderKind::Recurrent => {
                if hidden_dim == 0 {
                    return Err(Error::config("model.hidden_dim", "must be positive"));
                }
                (
                    Some(RnnCell::init(embedding_dim, hidden_dim, seed.wrapping_add(1))),
                    hidden_dim,
                )
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
        let head_w = Array2::from_shape_fn((num_classes, enc_dim), |_| {
            real(rng.random_range(-HEAD_INIT_RANGE..HEAD_INIT_RANGE))
        });
        let head_b = Array1::zeros(num_classes);
        Ok(ClassifierModel {
            params: ClassifierParams { embedding, rnn, head_w, head_b },
            encoder,
            num_classes,
        })
    }

    /// Rebuild a model around restored parameters.
    pub fn from_params(params: ClassifierParams<R>, encoder: EncoderKind) -> Result<Self> {
        let num_classes = params.head_w.nrows();
        if num_classes < 2 {
            return Err(Error::Checkpoint("classifier head has fewer than 2 rows".into()));
        }
        match (encoder, &params.rnn) {
            (EncoderKind::MeanPool, Some(_)) | (EncoderKind::Recurrent, None) => {
                return Err(Error::Checkpoint(
                    "encoder kind does not match stored tensors".into(),
                ));
            }
            _ => {}
        }
        Ok(ClassifierModel { params, encoder, num_classes })
    }

    pub fn encoder(&self) -> EncoderKind {
        self.encoder
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Hidden width of the recurrent encoder, if there is one.
    pub fn hidden_dim(&self) -> Option<usize> {
        self.params.rnn.as_ref().map(|cell| cell.hidden_dim())
    }

    fn check_tokens(&self, inst: &TextInstance) -> Result<()> {
        if inst.tokens.is_empty() {
            return Err(Error::EmptyText);
        }
        let n = self.params.embedding.dim().0 as u32;
        if let Some(&bad) = inst.tokens.iter().find(|&&t| t >= n) {
            return Err(Error::InvalidData(format!(
                "instance `{}` holds token id {bad} outside embedding table of size {n}",
                inst.id
            )));
        }
        if inst.label >= self.num_classes {
            return Err(Error::InvalidData(format!(
                "instance `{}` has label {} outside 0..{}",
                inst.id, inst.label, self.num_classes
            )));
        }
        Ok(())
    }

    fn embed(&self, tokens: &[u32]) -> Vec<Array1<R>> {
        tokens
            .iter()
            .map(|&t| self.params.embedding.row(t).to_owned())
            .collect()
    }

    fn encode(&self, embedded: &[Array1<R>]) -> (Array1<R>, Option<Vec<Array1<R>>>) {
        match (&self.encoder, &self.params.rnn) {
            (EncoderKind::MeanPool, _) => {
                let m = embedded[0].len();
                let mut rep = Array1::zeros(m);
                for e in embedded {
                    rep += e;
                }
                let inv = R::one() / real::<R>(embedded.len() as f64);
                rep.mapv_inplace(|x| x * inv);
                (rep, None)
            }
            (EncoderKind::Recurrent, Some(rnn)) => {
                let hidden = rnn.forward(embedded, false);
                let rep = hidden
                    .last()
                    .expect("non-empty instance")
                    .clone();
                (rep, Some(hidden))
            }
            (EncoderKind::Recurrent, None) => unreachable!("checked at construction"),
        }
    }

    /// Class log-probabilities.
    pub fn log_probs(&self, inst: &TextInstance) -> Result<Array1<R>> {
        self.check_tokens(inst)?;
        let embedded = self.embed(&inst.tokens);
        let (rep, _) = self.encode(&embedded);
        let logits = self.params.head_w.dot(&rep) + &self.params.head_b;
        Ok(log_softmax(&logits))
    }

    /// Predicted class: argmax of the logits, lowest index on ties.
    pub fn predict(&self, inst: &TextInstance) -> Result<usize> {
        let lp = self.log_probs(inst)?;
        let mut best = 0;
        for k in 1..lp.len() {
            if lp[k] > lp[best] {
                best = k;
            }
        }
        Ok(best)
    }
}

impl<R: Real> TaskModel<R> for ClassifierModel<R> {
    type Instance = TextInstance;
    type Params = ClassifierParams<R>;

    fn forward_loss(&self, inst: &TextInstance) -> Result<R> {
        Ok(-self.log_probs(inst)?[inst.label])
    }

    fn backward(&self, inst: &TextInstance) -> Result<GradientBundle<R, ClassifierParams<R>>> {
        self.check_tokens(inst)?;
        let t_len = inst.tokens.len();
        let (n, m) = self.params.embedding.dim();
        let embedded = self.embed(&inst.tokens);
        let (rep, hidden) = self.encode(&embedded);
        let logits = self.params.head_w.dot(&rep) + &self.params.head_b;
        let log_probs = log_softmax(&logits);
        let loss = -log_probs[inst.label];

        // d loss / d logits = softmax - onehot(label)
        let mut d_logits = log_probs.mapv(R::exp);
        d_logits[inst.label] -= R::one();

        let mut grads = ClassifierParams {
            embedding: EmbeddingMatrix::from_values(Array2::zeros((n, m)))?,
            rnn: self.params.rnn.as_ref().map(RnnCell::zeros_like),
            head_w: Array2::zeros(self.params.head_w.dim()),
            head_b: d_logits.clone(),
        };
        for (k, &dk) in d_logits.iter().enumerate() {
            grads.head_w.row_mut(k).scaled_add(dk, &rep);
        }
        let d_rep = self.params.head_w.t().dot(&d_logits);

        let mut input_grads = Array2::zeros((t_len, m));
        match (&self.encoder, &self.params.rnn, hidden) {
            (EncoderKind::MeanPool, _, _) => {
                let inv = R::one() / real::<R>(t_len as f64);
                for t in 0..t_len {
                    input_grads.row_mut(t).scaled_add(inv, &d_rep);
                }
            }
            (EncoderKind::Recurrent, Some(rnn), Some(hidden)) => {
                let mut d_hidden = vec![Array1::zeros(rnn.hidden_dim()); t_len];
                d_hidden[t_len - 1] = d_rep;
                let mut d_inputs = vec![Array1::zeros(m); t_len];
                rnn.backward(
                    &embedded,
                    &hidden,
                    d_hidden,
                    false,
                    grads.rnn.as_mut().expect("gradient mirrors params"),
                    &mut d_inputs,
                );
                for (t, d) in d_inputs.into_iter().enumerate() {
                    input_grads.row_mut(t).assign(&d);
                }
            }
            _ => unreachable!("checked at construction"),
        }

        // Scatter per-position gradients into the shared embedding rows.
        for (t, &tok) in inst.tokens.iter().enumerate() {
            grads
                .embedding
                .values_mut()
                .row_mut(tok as usize)
                .scaled_add(R::one(), &input_grads.row(t));
        }
        grads.embedding.zero_pad_row();

        Ok(GradientBundle { loss, params: grads, input_grads })
    }

    fn params(&self) -> &ClassifierParams<R> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ClassifierParams<R> {
        &mut self.params
    }

    fn embedding(&self) -> &EmbeddingMatrix<R> {
        &self.params.embedding
    }

    fn zero_pad_row(&mut self) {
        self.params.embedding.zero_pad_row();
    }

    fn instance_id(inst: &TextInstance) -> &str {
        &inst.id
    }

    fn input_len(inst: &TextInstance) -> usize {
        inst.tokens.len()
    }

    fn protected_positions(_inst: &TextInstance) -> Vec<usize> {
        Vec::new()
    }

    fn token_at(inst: &TextInstance, position: usize) -> Result<u32> {
        inst.tokens.get(position).copied().ok_or_else(|| {
            Error::InvalidData(format!(
                "position {position} outside instance `{}` of length {}",
                inst.id,
                inst.tokens.len()
            ))
        })
    }

    fn substitute(inst: &TextInstance, position: usize, token: u32) -> Result<TextInstance> {
        inst.with_substitution(position, token)
    }

    fn primary_metric(&self, insts: &[TextInstance]) -> Result<f64> {
        super::eval::accuracy(self, insts)
    }

    fn metric_name(&self) -> &'static str {
        "accuracy"
    }
}
