//! Analytic-vs-numeric gradient agreement for both model families, plus
//! the consistency of the per-position input gradients that the
//! substitution search consumes.

mod common;

use common::{fd_param_gradients, random_qa_instance, random_text_instance, relative_error};
use rand::Rng;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;
use unlearnable_core::models::classifier::{ClassifierModel, EncoderKind};
use unlearnable_core::models::span::SpanModel;
use unlearnable_core::models::{TaskModel, TensorSet};

const EPS: f64 = 1e-4;
const TOLERANCE: f64 = 1e-4;

#[test]
fn classifier_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    for case in 0..25 {
        let vocab_size = rng.random_range(12..24);
        let dim = rng.random_range(3..7);
        let classes = rng.random_range(2..5);
        let encoder = if case % 2 == 0 { EncoderKind::MeanPool } else { EncoderKind::Recurrent };
        let hidden = rng.random_range(3..6);
        let mut model = ClassifierModel::<f64>::new(
            vocab_size,
            dim,
            hidden,
            classes,
            encoder,
            rng.random(),
        )
        .unwrap();
        let inst = random_text_instance(&mut rng, case, vocab_size, classes);
        let analytic = model.backward(&inst).unwrap();
        let fd = fd_param_gradients(&mut model, &inst, EPS);
        let rel = relative_error(&analytic.params.read_flat(), &fd);
        assert!(
            rel < TOLERANCE,
            "case {case} ({encoder:?}): relative error {rel} exceeds {TOLERANCE}"
        );
    }
}

#[test]
fn span_model_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7370_616e);
    for case in 0..25 {
        let vocab_size = rng.random_range(16..28);
        let dim = rng.random_range(3..6);
        let hidden = rng.random_range(3..6);
        let mut model =
            SpanModel::<f64>::new(vocab_size, dim, hidden, rng.random()).unwrap();
        let inst = random_qa_instance(&mut rng, case, vocab_size);
        let analytic = model.backward(&inst).unwrap();
        let fd = fd_param_gradients(&mut model, &inst, EPS);
        let rel = relative_error(&analytic.params.read_flat(), &fd);
        assert!(rel < TOLERANCE, "case {case}: relative error {rel} exceeds {TOLERANCE}");
    }
}

/// With all-distinct tokens, the embedding-gradient row of the token at
/// position t must equal the search-facing input gradient for t.
#[test]
fn input_gradients_agree_with_embedding_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1e57);
    for case in 0..10 {
        let vocab_size = 30;
        let model = ClassifierModel::<f64>::new(
            vocab_size,
            5,
            4,
            3,
            if case % 2 == 0 { EncoderKind::MeanPool } else { EncoderKind::Recurrent },
            rng.random(),
        )
        .unwrap();
        let inst = random_text_instance(&mut rng, case, vocab_size, 3);
        let bundle = model.backward(&inst).unwrap();
        for (t, &token) in inst.tokens.iter().enumerate() {
            let row = bundle.params.embedding.row(token);
            let input = bundle.input_grads.row(t);
            for (a, b) in row.iter().zip(input.iter()) {
                assert!((a - b).abs() < 1e-12, "case {case} position {t}");
            }
        }
    }
    for case in 0..10 {
        let vocab_size = 40;
        let model = SpanModel::<f64>::new(vocab_size, 5, 4, rng.random()).unwrap();
        let inst = random_qa_instance(&mut rng, case, vocab_size);
        let bundle = model.backward(&inst).unwrap();
        for (t, &token) in inst.passage.iter().enumerate() {
            let row = bundle.params.embedding.row(token);
            let input = bundle.input_grads.row(t);
            for (a, b) in row.iter().zip(input.iter()) {
                assert!((a - b).abs() < 1e-12, "case {case} passage position {t}");
            }
        }
    }
}
