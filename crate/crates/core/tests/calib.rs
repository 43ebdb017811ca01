//! Temporary calibration sweep (not part of the suite).

mod common;

use std::collections::BTreeMap;

use unlearnable_core::corpus::{
    encode_text, generate_synthetic, vocabulary_over, Dataset, RawDataset, SyntheticSpec,
    TaskKind, TextDataset, TextInstance, Vocabulary,
};
use unlearnable_core::hints::{apply_hints, HintPattern, HintSpec, LabelPlacement};
use unlearnable_core::minmin::{apply_to_instances, generate_noise};
use unlearnable_core::models::classifier::{ClassifierModel, EncoderKind};
use unlearnable_core::models::eval::{accuracy, per_class_accuracy};
use unlearnable_core::search::ConstraintSet;
use unlearnable_core::trainer::{fit, TrainConfig};

fn spec(classes: usize, per_class: usize, eval_per_class: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        task: TaskKind::Classification,
        num_classes: classes,
        train_per_class: per_class,
        eval_per_class,
        seed,
        ..SyntheticSpec::default()
    }
}

fn encode(spec: &SyntheticSpec) -> (TextDataset, TextDataset, Vocabulary) {
    let data = generate_synthetic(spec).unwrap();
    let vocab = vocabulary_over(&[&data.train, &data.validation, &data.test]).unwrap();
    let enc = |raw: &RawDataset| match raw {
        RawDataset::Text(v) => encode_text(v, &vocab, spec.num_classes).unwrap(),
        _ => unreachable!(),
    };
    (enc(&data.train), enc(&data.test), vocab)
}

fn cfg(lr: f64, batch: usize, epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        max_grad_norm: None,
        batch_size: batch,
        max_epochs: epochs,
        patience: None,
        weight_decay: 0.0,
        seed: 42,
    }
}

fn cfg_wd(lr: f64, wd: f64, epochs: usize) -> TrainConfig {
    TrainConfig { weight_decay: wd, ..cfg(lr, 16, epochs) }
}

fn hint_all(train: &TextDataset, vocab: &mut Vocabulary, target: Option<usize>) -> TextDataset {
    let all: BTreeMap<usize, String> = [(0, "!"), (1, "@"), (2, "#"), (3, "%")]
        .into_iter()
        .take(train.num_classes)
        .map(|(k, s)| (k, s.to_string()))
        .collect();
    let symbols = match target {
        Some(c) => [(c, all[&c].clone())].into_iter().collect(),
        None => all,
    };
    let hs = HintSpec {
        pattern: HintPattern::Label { symbols, placement: LabelPlacement::End },
        fraction: 1.0,
        target_class: target,
        seed: Some(7),
    };
    match apply_hints(&Dataset::Text(train.clone()), &hs, vocab, 7).unwrap().0 {
        Dataset::Text(d) => d,
        _ => unreachable!(),
    }
}

#[test]
#[ignore]
fn race_curves() {
    let t0 = std::time::Instant::now();
    for (budget, mean_len, class_slot, per_class, lr, batch, epochs) in
        [(30000usize, 20usize, 0.3, 1250usize, 5.0, 16usize, 10usize)]
    {
        let s = SyntheticSpec {
            vocab_budget: budget,
            mean_len,
            class_slot,
            own_class: 1.0,
            ..spec(2, per_class, 100, 101)
        };
        let (train, test, vocab) = encode(&s);
        let curves = |insts: &[TextInstance]| -> Vec<f64> {
            let mut model =
                ClassifierModel::<f64>::new(vocab.size(), 16, 16, 2, EncoderKind::MeanPool, 11)
                    .unwrap();
            let out = fit(&mut model, insts, Some(("test", &test.instances)), &cfg(lr, batch, epochs))
                .unwrap();
            out.trace
                .series("test", "accuracy")
                .iter()
                .map(|r| (r.value * 1000.0).round() / 1000.0)
                .collect()
        };
        let clean = curves(&train.instances);
        let t_clean = t0.elapsed().as_secs_f64();
        let init = ClassifierModel::<f64>::new(vocab.size(), 16, 16, 2, EncoderKind::MeanPool, 12)
            .unwrap();
        let (noise, _) =
            generate_noise(&init, &train.instances, &ConstraintSet::unconstrained(), 0, 0)
                .unwrap();
        let t_noise = t0.elapsed().as_secs_f64();
        let noised_insts =
            apply_to_instances::<f64, ClassifierModel<f64>>(&train.instances, &noise).unwrap();
        let noised = curves(&noised_insts);
        println!(
            "race budget={budget} len={mean_len} slot={class_slot} n={per_class} lr={lr} batch={batch}:"
        );
        println!("  clean  {clean:?}");
        println!("  noised {noised:?}");
        println!(
            "  timing: clean_fit={t_clean:.1}s noise_gen={:.1}s noised_fit={:.1}s total={:.1}s",
            t_noise - t_clean,
            t0.elapsed().as_secs_f64() - t_noise,
            t0.elapsed().as_secs_f64()
        );
    }
}

#[test]
#[ignore]
fn hinted_grad_profile() {
    let (train, _, vocab) = encode(&spec(2, 500, 50, 404));
    for (lr, batch) in [(2.0, 16), (5.0, 16), (5.0, 8), (10.0, 16)] {
        let mut vocab = vocab.clone();
        let hinted = hint_all(&train, &mut vocab, None);
        let mut model =
            ClassifierModel::<f64>::new(vocab.size(), 16, 16, 2, EncoderKind::MeanPool, 41)
                .unwrap();
        let out = fit(&mut model, &hinted.instances, None, &cfg(lr, batch, 4)).unwrap();
        let norms: Vec<(usize, f64)> = out
            .trace
            .series("train", "loss")
            .iter()
            .map(|r| (r.epoch as usize, r.grad_norm.unwrap()))
            .collect();
        let base: f64 = norms.iter().take(50).map(|(_, n)| n).sum::<f64>() / 50.0;
        let post: Vec<f64> = norms.iter().filter(|(e, _)| *e >= 2).map(|(_, n)| *n).collect();
        let maxes: Vec<f64> = (2..=4)
            .map(|ep| {
                norms
                    .iter()
                    .filter(|(e, _)| *e == ep)
                    .map(|(_, n)| *n)
                    .fold(0.0_f64, f64::max)
            })
            .collect();
        println!(
            "hinted lr={lr} batch={batch}: base={base:.4} post0={:.3}% max_by_epoch={:?}%",
            100.0 * post[0] / base,
            maxes.iter().map(|m| (1000.0 * m / base).round() / 10.0).collect::<Vec<_>>()
        );
    }
}

#[test]
#[ignore]
fn partial_delta_probe() {
    for (family, budget, slot, own, per_class, base_n, add_n, lr, epochs) in [
        ("b6000", 6000usize, 0.3, 1.0, 625usize, 1000usize, 250usize, 5.0, 10usize),
        ("b8000", 8000, 0.3, 1.0, 625, 1000, 250, 5.0, 10),
        ("b12000", 12000, 0.3, 1.0, 625, 1000, 250, 5.0, 10),
        ("b8000-lr2", 8000, 0.3, 1.0, 625, 1000, 250, 2.0, 10),
        ("b8000-own85", 8000, 0.3, 0.85, 625, 1000, 250, 5.0, 10),
    ] {
        let s = SyntheticSpec {
            vocab_budget: budget,
            mean_len: 20,
            class_slot: slot,
            own_class: own,
            ..spec(2, per_class, 250, 1010)
        };
        let (train, test, vocab) = encode(&s);
        let mut vocab = vocab.clone();
        let base: Vec<TextInstance> = train.instances[..base_n].to_vec();
        let added: Vec<TextInstance> = train.instances[base_n..base_n + add_n].to_vec();
        let added_ds = TextDataset { num_classes: 2, instances: added.clone() };
        let hinted_added = hint_all(&added_ds, &mut vocab, None).instances;
        let c = cfg(lr, 16, epochs);
        let run = |insts: &[TextInstance], vocab: &Vocabulary| -> f64 {
            let mut model =
                ClassifierModel::<f64>::new(vocab.size(), 16, 16, 2, EncoderKind::MeanPool, 91)
                    .unwrap();
            fit(&mut model, insts, None, &c).unwrap();
            accuracy(&model, &test.instances).unwrap()
        };
        let acc_base = run(&base, &vocab);
        let mut with_clean = base.clone();
        with_clean.extend(added.iter().cloned());
        let acc_clean = run(&with_clean, &vocab);
        let mut with_hinted = base.clone();
        with_hinted.extend(hinted_added.iter().cloned());
        let acc_hinted = run(&with_hinted, &vocab);
        println!(
            "partial {family} base={base_n} add={add_n} lr={lr} epochs={epochs}: base={acc_base:.3} +clean={acc_clean:.3} (d={:+.3}) +hinted={acc_hinted:.3} (d={:+.3})",
            acc_clean - acc_base,
            acc_hinted - acc_base
        );
    }
}

#[test]
#[ignore]
fn one_class_hint_probe() {
    for (budget, class_slot, own_class, lr, epochs) in [
        (10000usize, 0.5, 0.70, 5.0, 10usize),
        (10000, 0.5, 0.70, 10.0, 10),
        (10000, 0.5, 0.70, 10.0, 16),
        (16000, 0.5, 0.70, 10.0, 16),
        (10000, 0.4, 0.80, 10.0, 16),
    ] {
        let s = SyntheticSpec { vocab_budget: budget, class_slot, own_class, ..spec(4, 300, 75, 303) };
        let (train, test, vocab) = encode(&s);
        let mut vocab = vocab.clone();
        let hinted = hint_all(&train, &mut vocab, Some(0));
        let mut model =
            ClassifierModel::<f64>::new(vocab.size(), 16, 16, 4, EncoderKind::MeanPool, 31)
                .unwrap();
        fit(&mut model, &hinted.instances, None, &cfg(lr, 16, epochs)).unwrap();
        let pc = per_class_accuracy(&model, &test.instances).unwrap();
        println!(
            "one-class budget={budget} slot={class_slot} own={own_class} lr={lr} epochs={epochs}: per-class={:?}",
            pc.values().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
}
