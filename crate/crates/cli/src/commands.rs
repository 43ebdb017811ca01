//! One function per CLI verb. Each takes a prepared run directory, does its
//! work through the library crate, writes artifacts into the directory, and
//! prints a one-document JSON summary to stdout.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;
use unlearnable_core::analysis::analyze as analyze_noise;
use unlearnable_core::checkpoint::{load_checkpoint, save_checkpoint, StoredModel};
use unlearnable_core::config::SplitChoice;
use unlearnable_core::corpus::{
    decode, save_qa_jsonl, save_text_jsonl, Dataset, QaDataset, RawDataset,
    RawQaInstance, RawTextInstance, TextDataset, Vocabulary,
};
use unlearnable_core::embedding::NeighborIndex;
use unlearnable_core::hints::apply_hints;
use unlearnable_core::minmin::{
    load_noise_set, run_minmin, save_noise_set, MinMinOptions,
};
use unlearnable_core::models::eval::{accuracy, per_class_accuracy, qa_exact_match, qa_token_f1};
use unlearnable_core::models::TaskModel;
use unlearnable_core::search::ConstraintSet;
use unlearnable_core::trainer::fit;
use unlearnable_core::{Error, Result};

use crate::data::{assemble, build_model, load_raw};
use crate::run::{print_json, write_json, RunContext};

/// Names shared between writers and tests.
pub const CHECKPOINT_STEM: &str = "model";
pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "final_metrics.json";

fn noise_file_name(milestone: usize) -> String {
    format!("error_min_{milestone}.json")
}

/// Write the generated synthetic splits as JSONL files.
pub fn gen_data(ctx: &RunContext) -> Result<()> {
    let config = &ctx.resolved.config;
    if !matches!(config.data, unlearnable_core::config::DataConfig::Synthetic(_)) {
        return Err(Error::config(
            "data.source",
            "gen-data only materializes synthetic corpora; JSONL sources already exist on disk",
        ));
    }
    let splits = load_raw(config)?;
    let mut counts = serde_json::Map::new();
    for (name, raw) in [
        ("train", Some(&splits.train)),
        ("validation", splits.validation.as_ref()),
        ("test", splits.test.as_ref()),
    ] {
        let Some(raw) = raw else { continue };
        let path = ctx.path(&format!("{name}.jsonl"));
        match raw {
            RawDataset::Text(items) => save_text_jsonl(&path, items)?,
            RawDataset::Qa(items) => save_qa_jsonl(&path, items)?,
        }
        counts.insert(name.to_string(), json!(raw.len()));
    }
    print_json(&json!({
        "command": "gen-data",
        "run_dir": ctx.dir,
        "config_sha": ctx.resolved.sha,
        "instances": counts,
    }))
}

#[derive(Serialize)]
struct FinalMetrics {
    seed: u64,
    config_sha: String,
    task: &'static str,
    metric: &'static str,
    epochs_run: usize,
    steps: u64,
    /// Quality on the (possibly hinted) data the model was trained on.
    final_train_metric: f64,
    final_train_loss: f64,
    /// Held-out metric per the eval split used during fitting, when any.
    #[serde(skip_serializing_if = "Option::is_none")]
    eval_split: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_eval_metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_eval_metric: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hinted_instances: Option<usize>,
}

/// Train the configured model, applying the config's hints (if any) to the
/// training split first; write checkpoint, trace, and final metrics.
pub fn train(ctx: &RunContext) -> Result<()> {
    let config = &ctx.resolved.config;
    let bundle = assemble(config, config.hints.is_some())?;
    let model = build_model(config, &bundle.vocab, bundle.num_classes)?;
    let cfg = config.train.to_train_config()?;
    let eval = bundle.eval_pair();

    let (stored, outcome, train_metric, train_loss, task, metric) = match (model, &bundle.train) {
        (StoredModel::Classifier(mut m), Dataset::Text(train)) => {
            let eval = eval.and_then(|(name, ds)| match ds {
                Dataset::Text(d) => Some((name, d.instances.as_slice())),
                Dataset::Qa(_) => None,
            });
            let out = fit(&mut m, &train.instances, eval, &cfg)?;
            let train_metric = m.primary_metric(&train.instances)?;
            let train_loss = m.mean_loss(&train.instances)?;
            (StoredModel::Classifier(m), out, train_metric, train_loss, "classification", "accuracy")
        }
        (StoredModel::Span(mut m), Dataset::Qa(train)) => {
            let eval = eval.and_then(|(name, ds)| match ds {
                Dataset::Qa(d) => Some((name, d.instances.as_slice())),
                Dataset::Text(_) => None,
            });
            let out = fit(&mut m, &train.instances, eval, &cfg)?;
            let train_metric = m.primary_metric(&train.instances)?;
            let train_loss = m.mean_loss(&train.instances)?;
            (StoredModel::Span(m), out, train_metric, train_loss, "qa", "token_f1")
        }
        _ => unreachable!("config validation ties the model kind to the task"),
    };

    save_checkpoint(
        &ctx.path(CHECKPOINT_STEM),
        &stored,
        &bundle.vocab,
        config.seed,
        &ctx.resolved.sha,
    )?;
    outcome.trace.save(&ctx.path(TRACE_FILE))?;
    let metrics = FinalMetrics {
        seed: config.seed,
        config_sha: ctx.resolved.sha.clone(),
        task,
        metric,
        epochs_run: outcome.epochs_run,
        steps: outcome.steps,
        final_train_metric: train_metric,
        final_train_loss: train_loss,
        eval_split: eval.map(|(name, _)| name),
        best_eval_metric: outcome.best_metric,
        final_eval_metric: outcome.final_metric,
        hinted_instances: bundle.hinted_ids.as_ref().map(|ids| ids.len()),
    };
    write_json(&ctx.path(METRICS_FILE), &metrics)?;
    print_json(&json!({
        "command": "train",
        "run_dir": ctx.dir,
        "config_sha": ctx.resolved.sha,
        "checkpoint": ctx.path(CHECKPOINT_STEM).with_extension("json"),
        "metrics": metrics,
    }))
}

/// Alternate training with substitution-search regeneration; write one
/// noise-set file per milestone plus the trace and a summary.
pub fn minmin(ctx: &RunContext) -> Result<()> {
    let config = &ctx.resolved.config;
    if config.hints.is_some() {
        return Err(Error::config(
            "hints",
            "the min-min search runs on clean data; drop the hints section (use `inject` for hints)",
        ));
    }
    let bundle = assemble(config, false)?;
    let model = build_model(config, &bundle.vocab, bundle.num_classes)?;
    let cfg = config.train.to_train_config()?;
    let interval = config
        .minmin
        .interval
        .ok_or_else(|| Error::config("minmin.interval", "unresolved; call resolve() first"))?;
    let eval_choice = config.minmin.eval_split;
    let eval_ds = bundle.split(eval_choice).ok_or_else(|| {
        Error::config(
            "minmin.eval_split",
            format!("the data source has no {} split", eval_choice.name()),
        )
    })?;

    let (stored, outcome) = match (model, &bundle.train, eval_ds) {
        (StoredModel::Classifier(mut m), Dataset::Text(train), Dataset::Text(eval)) => {
            let constraints = constraints_for(&m, config.minmin.tau)?;
            let opts = MinMinOptions {
                interval,
                epsilon: config.minmin.epsilon,
                constraints,
                eval_split: eval_choice.name().to_string(),
            };
            let out = run_minmin(&mut m, &train.instances, &eval.instances, &cfg, &opts)?;
            (StoredModel::Classifier(m), out)
        }
        (StoredModel::Span(mut m), Dataset::Qa(train), Dataset::Qa(eval)) => {
            let constraints = constraints_for(&m, config.minmin.tau)?;
            let opts = MinMinOptions {
                interval,
                epsilon: config.minmin.epsilon,
                constraints,
                eval_split: eval_choice.name().to_string(),
            };
            let out = run_minmin(&mut m, &train.instances, &eval.instances, &cfg, &opts)?;
            (StoredModel::Span(m), out)
        }
        _ => unreachable!("config validation ties the model kind to the task"),
    };

    let mut files = Vec::new();
    for set in &outcome.noise_sets {
        let path = ctx.path(&noise_file_name(set.milestone));
        save_noise_set(&path, set, &bundle.vocab, config.seed, &ctx.resolved.sha)?;
        files.push(path);
    }
    outcome.trace.save(&ctx.path(TRACE_FILE))?;
    save_checkpoint(
        &ctx.path(CHECKPOINT_STEM),
        &stored,
        &bundle.vocab,
        config.seed,
        &ctx.resolved.sha,
    )?;
    let summary = json!({
        "command": "minmin",
        "run_dir": ctx.dir,
        "config_sha": ctx.resolved.sha,
        "seed": config.seed,
        "interval": interval,
        "eval_split": eval_choice.name(),
        "milestone_metrics": outcome.milestone_metrics,
        "steps": outcome.steps,
        "stopped_on_plateau": outcome.stopped_on_plateau,
        "instances_without_admissible_substitution": outcome.skipped,
        "noise_sets": files,
    });
    write_json(&ctx.path("minmin_summary.json"), &summary)?;
    print_json(&summary)
}

fn constraints_for<M: TaskModel<f64>>(model: &M, tau: Option<f64>) -> Result<ConstraintSet> {
    match tau {
        None => Ok(ConstraintSet::unconstrained()),
        Some(tau) => {
            let index = NeighborIndex::build(model.embedding(), tau)?;
            Ok(ConstraintSet::with_similarity(Arc::new(index)))
        }
    }
}

/// Apply the config's hint pattern to the training split and write the
/// hinted corpus plus the list of touched instance ids.
pub fn inject(ctx: &RunContext) -> Result<()> {
    let config = &ctx.resolved.config;
    if config.hints.is_none() {
        return Err(Error::config("hints", "inject needs a hints section in the config"));
    }
    let bundle = assemble(config, true)?;
    let ids = bundle.hinted_ids.clone().unwrap_or_default();
    let hinted_path = ctx.path("hinted_train.jsonl");
    match &bundle.train {
        Dataset::Text(d) => save_text_jsonl(&hinted_path, &text_to_raw(d, &bundle.vocab)?)?,
        Dataset::Qa(d) => save_qa_jsonl(&hinted_path, &qa_to_raw(d, &bundle.vocab)?)?,
    }
    let touched = json!({
        "seed": config.seed,
        "config_sha": ctx.resolved.sha,
        "count": ids.len(),
        "ids": ids,
    });
    write_json(&ctx.path("touched_ids.json"), &touched)?;
    print_json(&json!({
        "command": "inject",
        "run_dir": ctx.dir,
        "config_sha": ctx.resolved.sha,
        "hinted_train": hinted_path,
        "hinted_instances": ids.len(),
        "total_instances": bundle.train.len(),
    }))
}

fn text_to_raw(d: &TextDataset, vocab: &Vocabulary) -> Result<Vec<RawTextInstance>> {
    d.instances
        .iter()
        .map(|inst| {
            Ok(RawTextInstance {
                id: inst.id.clone(),
                text: decode(&inst.tokens, vocab)?,
                label: inst.label,
            })
        })
        .collect()
}

fn qa_to_raw(d: &QaDataset, vocab: &Vocabulary) -> Result<Vec<RawQaInstance>> {
    d.instances
        .iter()
        .map(|inst| {
            Ok(RawQaInstance {
                id: inst.id.clone(),
                passage: decode(&inst.passage, vocab)?,
                question: decode(&inst.question, vocab)?,
                answer_start_token: inst.answer_start,
                answer_end_token: inst.answer_end,
            })
        })
        .collect()
}

/// Recompute substitution statistics for stored noise sets (all
/// `error_min_*.json` in the run directory unless explicit paths are given).
pub fn analyze(ctx: &RunContext, noise: &[PathBuf]) -> Result<()> {
    let config = &ctx.resolved.config;
    let bundle = assemble(config, false)?;
    let files: Vec<PathBuf> = if noise.is_empty() {
        let mut found: Vec<PathBuf> = std::fs::read_dir(&ctx.dir)?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("error_min_") && n.ends_with(".json"))
            })
            .collect();
        found.sort();
        found
    } else {
        noise.to_vec()
    };
    if files.is_empty() {
        return Err(Error::InvalidData(
            "no noise sets to analyze; run `minmin` first or pass --noise".into(),
        ));
    }
    let mut summaries = Vec::new();
    for file in &files {
        let set = load_noise_set(file, &bundle.vocab)?;
        let report = analyze_noise(
            &set,
            &bundle.train,
            &bundle.vocab,
            config.analysis.top_k,
            config.seed,
            &ctx.resolved.sha,
        )?;
        report.save_json(&ctx.path(&format!("analysis_{}.json", report.milestone)))?;
        report.save_csv(&ctx.path(&format!("analysis_{}.csv", report.milestone)))?;
        summaries.push(json!({
            "noise_set": file,
            "milestone": report.milestone,
            "modifications": report.num_modifications,
            "avg_jaccard": report.jaccard.as_ref().map(|j| j.mean),
            "topk_cumulative": report.topk_cumulative,
            "answer_distance_within_one": report.answer_distance_within_one,
        }));
    }
    print_json(&json!({
        "command": "analyze",
        "run_dir": ctx.dir,
        "config_sha": ctx.resolved.sha,
        "reports": summaries,
    }))
}

/// Evaluate a checkpoint on one split of the configured dataset and print
/// the metrics. The checkpoint's stored vocabulary is authoritative.
pub fn eval(ctx: &RunContext, checkpoint: Option<&Path>, split: SplitChoice) -> Result<()> {
    let config = &ctx.resolved.config;
    let default_stem = ctx.path(CHECKPOINT_STEM);
    let path = checkpoint.unwrap_or(&default_stem);
    let (model, manifest) = load_checkpoint(path)?;
    let mut vocab = manifest.vocab.clone();

    let splits = load_raw(config)?;
    let raw = match split {
        SplitChoice::Train => Some(&splits.train),
        SplitChoice::Validation => splits.validation.as_ref(),
        SplitChoice::Test => splits.test.as_ref(),
    }
    .ok_or_else(|| {
        Error::config("data", format!("the data source has no {} split", split.name()))
    })?;

    let num_classes = match &model {
        StoredModel::Classifier(m) => m.num_classes(),
        StoredModel::Span(_) => 0,
    };
    let mut ds = match raw {
        RawDataset::Text(items) => {
            Dataset::Text(unlearnable_core::corpus::encode_text(items, &vocab, num_classes)?)
        }
        RawDataset::Qa(items) => {
            Dataset::Qa(unlearnable_core::corpus::encode_qa(items, &vocab)?)
        }
    };
    // Models trained on hinted data are scored against the same hinted view
    // of their training split; held-out splits always stay clean.
    if split == SplitChoice::Train {
        if let Some(spec) = &config.hints {
            let seed = spec
                .seed
                .ok_or_else(|| Error::config("hints.seed", "unresolved; call resolve() first"))?;
            let before = vocab.size();
            let (hinted, _) = apply_hints(&ds, spec, &mut vocab, seed)?;
            if vocab.size() != before {
                return Err(Error::InvalidData(
                    "checkpoint vocabulary lacks the hint symbols; it was not trained with this config".into(),
                ));
            }
            ds = hinted;
        }
    }

    let metrics = match (&model, &ds) {
        (StoredModel::Classifier(m), Dataset::Text(d)) => json!({
            "accuracy": accuracy(m, &d.instances)?,
            "per_class_accuracy": per_class_accuracy(m, &d.instances)?,
            "loss": m.mean_loss(&d.instances)?,
        }),
        (StoredModel::Span(m), Dataset::Qa(d)) => json!({
            "token_f1": qa_token_f1(m, &d.instances)?,
            "exact_match": qa_exact_match(m, &d.instances)?,
            "loss": m.mean_loss(&d.instances)?,
        }),
        _ => {
            return Err(Error::InvalidData(
                "checkpoint task does not match the configured data source".into(),
            ))
        }
    };
    print_json(&json!({
        "command": "eval",
        "config_sha": ctx.resolved.sha,
        "checkpoint_sha": manifest.config_sha,
        "split": split.name(),
        "instances": ds.len(),
        "metrics": metrics,
    }))
}

/// Train three models — base data only, base plus clean added data, base
/// plus hinted added data — and report both accuracy deltas against base.
pub fn partial_delta(ctx: &RunContext, base_fraction: f64, added_fraction: f64) -> Result<()> {
    if !(base_fraction > 0.0 && base_fraction <= 1.0) {
        return Err(Error::config("base_fraction", "must lie in (0, 1]"));
    }
    if !(0.0..=1.0).contains(&added_fraction) {
        return Err(Error::config("added_fraction", "must lie in [0, 1]"));
    }
    if base_fraction + added_fraction > 1.0 + 1e-9 {
        return Err(Error::config(
            "added_fraction",
            "base_fraction + added_fraction must not exceed 1",
        ));
    }
    let config = &ctx.resolved.config;
    let spec = config.hints.as_ref().ok_or_else(|| {
        Error::config("hints", "partial-delta needs a hints section for the protected arm")
    })?;
    let hint_seed = spec
        .seed
        .ok_or_else(|| Error::config("hints.seed", "unresolved; call resolve() first"))?;

    let mut bundle = assemble(config, false)?;
    let test = bundle
        .split(SplitChoice::Test)
        .ok_or_else(|| Error::config("data", "partial-delta needs a test split"))?
        .clone();
    let n = bundle.train.len();
    let n_base = ((base_fraction * n as f64) + 1e-9).floor() as usize;
    let n_added = ((added_fraction * n as f64) + 1e-9).floor() as usize;
    if n_base == 0 {
        return Err(Error::config("base_fraction", "selects zero training instances"));
    }

    let cfg = config.train.to_train_config()?;
    let (base_metric, partial_metric, unlearn_metric) = match (&mut bundle.train, &test) {
        (Dataset::Text(train), Dataset::Text(test)) => {
            let base = &train.instances[..n_base];
            let added = &train.instances[n_base..n_base + n_added];
            let hinted = if n_added == 0 {
                TextDataset { num_classes: train.num_classes, instances: Vec::new() }
            } else {
                let hinted_ds = Dataset::Text(TextDataset {
                    num_classes: train.num_classes,
                    instances: added.to_vec(),
                });
                let (hinted, _) = apply_hints(&hinted_ds, spec, &mut bundle.vocab, hint_seed)?;
                let Dataset::Text(hinted) = hinted else {
                    unreachable!("label hints keep the task")
                };
                hinted
            };
            let model = build_model(config, &bundle.vocab, bundle.num_classes)?;
            let StoredModel::Classifier(model) = model else {
                unreachable!("config validation ties the model kind to the task")
            };
            let run = |extra: &[unlearnable_core::corpus::TextInstance]| -> Result<f64> {
                let mut m = model.clone();
                let data: Vec<_> = base.iter().chain(extra).cloned().collect();
                fit(&mut m, &data, None, &cfg)?;
                m.primary_metric(&test.instances)
            };
            (run(&[])?, run(added)?, run(&hinted.instances)?)
        }
        (Dataset::Qa(train), Dataset::Qa(test)) => {
            let base = &train.instances[..n_base];
            let added = &train.instances[n_base..n_base + n_added];
            let hinted = if n_added == 0 {
                QaDataset { instances: Vec::new() }
            } else {
                let hinted_ds = Dataset::Qa(QaDataset { instances: added.to_vec() });
                let (hinted, _) = apply_hints(&hinted_ds, spec, &mut bundle.vocab, hint_seed)?;
                let Dataset::Qa(hinted) = hinted else {
                    unreachable!("answer hints keep the task")
                };
                hinted
            };
            let model = build_model(config, &bundle.vocab, bundle.num_classes)?;
            let StoredModel::Span(model) = model else {
                unreachable!("config validation ties the model kind to the task")
            };
            let run = |extra: &[unlearnable_core::corpus::QaInstance]| -> Result<f64> {
                let mut m = model.clone();
                let data: Vec<_> = base.iter().chain(extra).cloned().collect();
                fit(&mut m, &data, None, &cfg)?;
                m.primary_metric(&test.instances)
            };
            (run(&[])?, run(added)?, run(&hinted.instances)?)
        }
        _ => unreachable!("assemble encodes splits uniformly"),
    };

    let table = json!({
        "command": "partial-delta",
        "run_dir": ctx.dir,
        "config_sha": ctx.resolved.sha,
        "seed": config.seed,
        "base_fraction": base_fraction,
        "added_fraction": added_fraction,
        "instances_base": n_base,
        "instances_added": n_added,
        "base_metric": base_metric,
        "with_clean_added": partial_metric,
        "with_hinted_added": unlearn_metric,
        "delta_partial": partial_metric - base_metric,
        "delta_unlearn": unlearn_metric - base_metric,
    });
    write_json(&ctx.path("partial_delta.json"), &table)?;
    print_json(&table)
}
