//! Extractive QA: predict an answer span inside a passage.
//!
//! The passage is read by forward and backward Elman cells; the question by
//! a third cell whose mean-pooled hidden states form a summary vector. Each
//! passage position is scored for span start and span end from the
//! concatenation `[forward_t ; backward_t ; question_summary]` by two linear
//! heads, and the loss is the sum of the start and end cross-entropies.

use ndarray::{s, Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::QaInstance;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::scalar::{real, Real};

use super::rnn::RnnCell;
use super::{log_softmax, GradientBundle, TaskModel, TensorSet};

/// Decoded answer spans are at most this many tokens long.
pub const MAX_SPAN_LEN: usize = 15;

/// Half-width of the uniform initialization interval for head weights.
const HEAD_INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct SpanParams<R: Real> {
    pub embedding: EmbeddingMatrix<R>,
    pub fwd: RnnCell<R>,
    pub bwd: RnnCell<R>,
    pub question: RnnCell<R>,
    /// 3·hidden scoring vector for span starts.
    pub start_w: Array1<R>,
    pub start_b: Array1<R>,
    /// 3·hidden scoring vector for span ends.
    pub end_w: Array1<R>,
    pub end_b: Array1<R>,
}

impl<R: Real> TensorSet<R> for SpanParams<R> {
    fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, R>)> {
        vec![
            ("embedding", self.embedding.values().view().into_dyn()),
            ("fwd_w_in", self.fwd.w_in.view().into_dyn()),
            ("fwd_w_rec", self.fwd.w_rec.view().into_dyn()),
            ("fwd_bias", self.fwd.bias.view().into_dyn()),
            ("bwd_w_in", self.bwd.w_in.view().into_dyn()),
            ("bwd_w_rec", self.bwd.w_rec.view().into_dyn()),
            ("bwd_bias", self.bwd.bias.view().into_dyn()),
            ("q_w_in", self.question.w_in.view().into_dyn()),
            ("q_w_rec", self.question.w_rec.view().into_dyn()),
            ("q_bias", self.question.bias.view().into_dyn()),
            ("start_w", self.start_w.view().into_dyn()),
            ("start_b", self.start_b.view().into_dyn()),
            ("end_w", self.end_w.view().into_dyn()),
            ("end_b", self.end_b.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, R>)> {
        vec![
            ("embedding", self.embedding.values_mut().view_mut().into_dyn()),
            ("fwd_w_in", self.fwd.w_in.view_mut().into_dyn()),
            ("fwd_w_rec", self.fwd.w_rec.view_mut().into_dyn()),
            ("fwd_bias", self.fwd.bias.view_mut().into_dyn()),
            ("bwd_w_in", self.bwd.w_in.view_mut().into_dyn()),
            ("bwd_w_rec", self.bwd.w_rec.view_mut().into_dyn()),
            ("bwd_bias", self.bwd.bias.view_mut().into_dyn()),
            ("q_w_in", self.question.w_in.view_mut().into_dyn()),
            ("q_w_rec", self.question.w_rec.view_mut().into_dyn()),
            ("q_bias", self.question.bias.view_mut().into_dyn()),
            ("start_w", self.start_w.view_mut().into_dyn()),
            ("start_b", self.start_b.view_mut().into_dyn()),
            ("end_w", self.end_w.view_mut().into_dyn()),
            ("end_b", self.end_b.view_mut().into_dyn()),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct SpanModel<R: Real> {
    params: SpanParams<R>,
    hidden_dim: usize,
}

struct SpanForward<R: Real> {
    embedded_p: Vec<Array1<R>>,
    embedded_q: Vec<Array1<R>>,
    h_fwd: Vec<Array1<R>>,
    h_bwd: Vec<Array1<R>>,
    h_q: Vec<Array1<R>>,
    q_summary: Array1<R>,
    start_logp: Array1<R>,
    end_logp: Array1<R>,
}

impl<R: Real> SpanModel<R> {
    pub fn new(vocab_size: usize, embedding_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        if hidden_dim == 0 {
            return Err(Error::config("model.hidden_dim", "must be positive"));
        }
        let embedding = EmbeddingMatrix::init(vocab_size, embedding_dim, seed)?;
        let fwd = RnnCell::init(embedding_dim, hidden_dim, seed.wrapping_add(1));
        let bwd = RnnCell::init(embedding_dim, hidden_dim, seed.wrapping_add(2));
        let question = RnnCell::init(embedding_dim, hidden_dim, seed.wrapping_add(3));
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4));
        let mut head = || {
            Array1::from_shape_fn(3 * hidden_dim, |_| {
                real(rng.random_range(-HEAD_INIT_RANGE..HEAD_INIT_RANGE))
            })
        };
        let start_w = head();
        let end_w = head();
        Ok(SpanModel {
            params: SpanParams {
                embedding,
                fwd,
                bwd,
                question,
                start_w,
                start_b: Array1::zeros(1),
                end_w,
                end_b: Array1::zeros(1),
            },
            hidden_dim,
        })
    }

    pub fn from_params(params: SpanParams<R>) -> Result<Self> {
        let hidden_dim = params.fwd.hidden_dim();
        if hidden_dim == 0
            || params.bwd.hidden_dim() != hidden_dim
            || params.question.hidden_dim() != hidden_dim
            || params.start_w.len() != 3 * hidden_dim
            || params.end_w.len() != 3 * hidden_dim
        {
            return Err(Error::Checkpoint("span tensors have inconsistent shapes".into()));
        }
        Ok(SpanModel { params, hidden_dim })
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn check(&self, inst: &QaInstance) -> Result<()> {
        if inst.passage.is_empty() || inst.question.is_empty() {
            return Err(Error::EmptyText);
        }
        let n = self.params.embedding.dim().0 as u32;
        for &t in inst.passage.iter().chain(inst.question.iter()) {
            if t >= n {
                return Err(Error::InvalidData(format!(
                    "instance `{}` holds token id {t} outside embedding table of size {n}",
                    inst.id
                )));
            }
        }
        if inst.answer_start > inst.answer_end || inst.answer_end >= inst.passage.len() {
            return Err(Error::InvalidData(format!(
                "instance `{}` has answer span {}..={} outside passage of length {}",
                inst.id,
                inst.answer_start,
                inst.answer_end,
                inst.passage.len()
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

    fn run_forward(&self, inst: &QaInstance) -> Result<SpanForward<R>> {
        self.check(inst)?;
        let p = &self.params;
        let embedded_p = self.embed(&inst.passage);
        let embedded_q = self.embed(&inst.question);
        let h_fwd = p.fwd.forward(&embedded_p, false);
        let h_bwd = p.bwd.forward(&embedded_p, true);
        let h_q = p.question.forward(&embedded_q, false);

        let mut q_summary = Array1::zeros(self.hidden_dim);
        for h in &h_q {
            q_summary += h;
        }
        let inv_q = R::one() / real::<R>(h_q.len() as f64);
        q_summary.mapv_inplace(|x| x * inv_q);

        let t_len = inst.passage.len();
        let h = self.hidden_dim;
        let mut start_logits = Array1::zeros(t_len);
        let mut end_logits = Array1::zeros(t_len);
        for t in 0..t_len {
            let mut s_acc = p.start_b[0];
            let mut e_acc = p.end_b[0];
            for i in 0..h {
                s_acc += p.start_w[i] * h_fwd[t][i];
                e_acc += p.end_w[i] * h_fwd[t][i];
            }
            for i in 0..h {
                s_acc += p.start_w[h + i] * h_bwd[t][i];
                e_acc += p.end_w[h + i] * h_bwd[t][i];
            }
            for i in 0..h {
                s_acc += p.start_w[2 * h + i] * q_summary[i];
                e_acc += p.end_w[2 * h + i] * q_summary[i];
            }
            start_logits[t] = s_acc;
            end_logits[t] = e_acc;
        }
        Ok(SpanForward {
            embedded_p,
            embedded_q,
            h_fwd,
            h_bwd,
            h_q,
            q_summary,
            start_logp: log_softmax(&start_logits),
            end_logp: log_softmax(&end_logits),
        })
    }

    /// Log-probabilities over passage positions for span start and end.
    pub fn span_log_probs(&self, inst: &QaInstance) -> Result<(Array1<R>, Array1<R>)> {
        let f = self.run_forward(inst)?;
        Ok((f.start_logp, f.end_logp))
    }

    /// Most probable admissible span: maximizes start·end probability over
    /// pairs with `start ≤ end < start + MAX_SPAN_LEN`; earliest span wins
    /// ties.
    pub fn predict_span(&self, inst: &QaInstance) -> Result<(usize, usize)> {
        let (start_logp, end_logp) = self.span_log_probs(inst)?;
        Ok(decode_span(&start_logp, &end_logp))
    }
}

/// Decode the argmax span from start/end log-probabilities.
pub fn decode_span<R: Real>(start_logp: &Array1<R>, end_logp: &Array1<R>) -> (usize, usize) {
    let t_len = start_logp.len();
    let mut best = (0usize, 0usize);
    let mut best_score = R::neg_infinity();
    for i in 0..t_len {
        let top = (i + MAX_SPAN_LEN).min(t_len);
        for j in i..top {
            let score = start_logp[i] + end_logp[j];
            if score > best_score {
                best_score = score;
                best = (i, j);
            }
        }
    }
    best
}

impl<R: Real> TaskModel<R> for SpanModel<R> {
    type Instance = QaInstance;
    type Params = SpanParams<R>;

    fn forward_loss(&self, inst: &QaInstance) -> Result<R> {
        let f = self.run_forward(inst)?;
        Ok(-(f.start_logp[inst.answer_start] + f.end_logp[inst.answer_end]))
    }

    fn backward(&self, inst: &QaInstance) -> Result<GradientBundle<R, SpanParams<R>>> {
        let f = self.run_forward(inst)?;
        let p = &self.params;
        let t_len = inst.passage.len();
        let q_len = inst.question.len();
        let h = self.hidden_dim;
        let (n, m) = p.embedding.dim();
        let loss = -(f.start_logp[inst.answer_start] + f.end_logp[inst.answer_end]);

        let mut d_start = f.start_logp.mapv(R::exp);
        d_start[inst.answer_start] -= R::one();
        let mut d_end = f.end_logp.mapv(R::exp);
        d_end[inst.answer_end] -= R::one();

        let mut grads = SpanParams {
            embedding: EmbeddingMatrix::from_values(Array2::zeros((n, m)))?,
            fwd: RnnCell::zeros_like(&p.fwd),
            bwd: RnnCell::zeros_like(&p.bwd),
            question: RnnCell::zeros_like(&p.question),
            start_w: Array1::zeros(3 * h),
            start_b: Array1::zeros(1),
            end_w: Array1::zeros(3 * h),
            end_b: Array1::zeros(1),
        };

        let mut d_h_fwd = vec![Array1::zeros(h); t_len];
        let mut d_h_bwd = vec![Array1::zeros(h); t_len];
        let mut d_q_summary = Array1::<R>::zeros(h);
        for t in 0..t_len {
            let ds = d_start[t];
            let de = d_end[t];
            grads.start_b[0] += ds;
            grads.end_b[0] += de;
            // z_t = [h_fwd[t] ; h_bwd[t] ; q_summary]
            grads.start_w.slice_mut(s![0..h]).scaled_add(ds, &f.h_fwd[t]);
            grads.start_w.slice_mut(s![h..2 * h]).scaled_add(ds, &f.h_bwd[t]);
            grads.start_w.slice_mut(s![2 * h..3 * h]).scaled_add(ds, &f.q_summary);
            grads.end_w.slice_mut(s![0..h]).scaled_add(de, &f.h_fwd[t]);
            grads.end_w.slice_mut(s![h..2 * h]).scaled_add(de, &f.h_bwd[t]);
            grads.end_w.slice_mut(s![2 * h..3 * h]).scaled_add(de, &f.q_summary);

            d_h_fwd[t].scaled_add(ds, &p.start_w.slice(s![0..h]));
            d_h_fwd[t].scaled_add(de, &p.end_w.slice(s![0..h]));
            d_h_bwd[t].scaled_add(ds, &p.start_w.slice(s![h..2 * h]));
            d_h_bwd[t].scaled_add(de, &p.end_w.slice(s![h..2 * h]));
            d_q_summary.scaled_add(ds, &p.start_w.slice(s![2 * h..3 * h]));
            d_q_summary.scaled_add(de, &p.end_w.slice(s![2 * h..3 * h]));
        }

        let mut d_inputs_p = vec![Array1::zeros(m); t_len];
        p.fwd
            .backward(&f.embedded_p, &f.h_fwd, d_h_fwd, false, &mut grads.fwd, &mut d_inputs_p);
        p.bwd
            .backward(&f.embedded_p, &f.h_bwd, d_h_bwd, true, &mut grads.bwd, &mut d_inputs_p);

        let inv_q = R::one() / real::<R>(q_len as f64);
        let d_h_q = vec![d_q_summary.mapv(|x| x * inv_q); q_len];
        let mut d_inputs_q = vec![Array1::zeros(m); q_len];
        p.question
            .backward(&f.embedded_q, &f.h_q, d_h_q, false, &mut grads.question, &mut d_inputs_q);

        let mut input_grads = Array2::zeros((t_len, m));
        for (t, d) in d_inputs_p.iter().enumerate() {
            input_grads.row_mut(t).assign(d);
        }
        for (t, &tok) in inst.passage.iter().enumerate() {
            grads
                .embedding
                .values_mut()
                .row_mut(tok as usize)
                .scaled_add(R::one(), &d_inputs_p[t].view());
        }
        for (t, &tok) in inst.question.iter().enumerate() {
            grads
                .embedding
                .values_mut()
                .row_mut(tok as usize)
                .scaled_add(R::one(), &d_inputs_q[t].view());
        }
        grads.embedding.zero_pad_row();

        Ok(GradientBundle { loss, params: grads, input_grads })
    }

    fn params(&self) -> &SpanParams<R> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut SpanParams<R> {
        &mut self.params
    }

    fn embedding(&self) -> &EmbeddingMatrix<R> {
        &self.params.embedding
    }

    fn zero_pad_row(&mut self) {
        self.params.embedding.zero_pad_row();
    }

    fn instance_id(inst: &QaInstance) -> &str {
        &inst.id
    }

    fn input_len(inst: &QaInstance) -> usize {
        inst.passage.len()
    }

    fn protected_positions(inst: &QaInstance) -> Vec<usize> {
        (inst.answer_start..=inst.answer_end).collect()
    }

    fn token_at(inst: &QaInstance, position: usize) -> Result<u32> {
        inst.passage.get(position).copied().ok_or_else(|| {
            Error::InvalidData(format!(
                "position {position} outside passage `{}` of length {}",
                inst.id,
                inst.passage.len()
            ))
        })
    }

    fn substitute(inst: &QaInstance, position: usize, token: u32) -> Result<QaInstance> {
        inst.with_substitution(position, token)
    }

    fn primary_metric(&self, insts: &[QaInstance]) -> Result<f64> {
        super::eval::qa_token_f1(self, insts)
    }

    fn metric_name(&self) -> &'static str {
        "token_f1"
    }
}
