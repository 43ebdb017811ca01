//! Shared helpers for the integration suites: a finite-difference gradient
//! oracle that knows nothing about how backward passes are implemented,
//! and small seeded instance generators.
//!
//! Each test binary uses its own subset of these helpers.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use unlearnable_core::corpus::{QaInstance, TextInstance, NUM_SPECIALS};
use unlearnable_core::models::{TaskModel, TensorSet};

/// Central finite differences over every parameter: the loss is probed at
/// θ±ε per coordinate and the model is restored afterwards.
pub fn fd_param_gradients<M: TaskModel<f64>>(
    model: &mut M,
    inst: &M::Instance,
    eps: f64,
) -> Vec<f64> {
    let theta = model.params().read_flat();
    let mut fd = vec![0.0; theta.len()];
    let mut probe = theta.clone();
    for i in 0..theta.len() {
        probe[i] = theta[i] + eps;
        model.params_mut().write_flat(&probe).expect("same length");
        let plus = model.forward_loss(inst).expect("probe forward");
        probe[i] = theta[i] - eps;
        model.params_mut().write_flat(&probe).expect("same length");
        let minus = model.forward_loss(inst).expect("probe forward");
        fd[i] = (plus - minus) / (2.0 * eps);
        probe[i] = theta[i];
    }
    model.params_mut().write_flat(&theta).expect("restore");
    fd
}

/// ‖a − b‖₂ / ‖b‖₂ with a floor against zero-gradient cases.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient vectors must align");
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-9)
}

/// Distinct non-special token ids, so every embedding row is touched by at
/// most one position.
pub fn distinct_tokens(rng: &mut ChaCha8Rng, len: usize, vocab_size: usize) -> Vec<u32> {
    use rand::seq::SliceRandom;
    let mut pool: Vec<u32> = (NUM_SPECIALS as u32..vocab_size as u32).collect();
    assert!(len <= pool.len(), "vocabulary too small for {len} distinct tokens");
    pool.shuffle(rng);
    pool.truncate(len);
    pool
}

pub fn random_text_instance(
    rng: &mut ChaCha8Rng,
    id: usize,
    vocab_size: usize,
    num_classes: usize,
) -> TextInstance {
    let len = rng.random_range(3..=8);
    TextInstance {
        id: format!("t{id}"),
        tokens: distinct_tokens(rng, len, vocab_size),
        label: rng.random_range(0..num_classes),
    }
}

pub fn random_qa_instance(rng: &mut ChaCha8Rng, id: usize, vocab_size: usize) -> QaInstance {
    let p_len = rng.random_range(4..=8);
    let q_len = rng.random_range(2..=4);
    let tokens = distinct_tokens(rng, p_len + q_len, vocab_size);
    let (passage, question) = tokens.split_at(p_len);
    let start = rng.random_range(0..p_len);
    let end = (start + rng.random_range(0..2)).min(p_len - 1);
    QaInstance {
        id: format!("q{id}"),
        passage: passage.to_vec(),
        question: question.to_vec(),
        answer_start: start,
        answer_end: end,
    }
}
