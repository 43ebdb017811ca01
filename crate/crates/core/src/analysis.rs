//! Pattern statistics over noise sets: what the optimization actually did.
//!
//! For classification, substitutes are grouped into label-wise bags of
//! words; the pairwise Jaccard similarity between class bags and the
//! cumulative probability mass of each class's most frequent substitutes
//! measure how class-pure and how concentrated the noise is. Positions are
//! reported as a relative-position histogram; QA modifications additionally
//! get their token distance to the nearest answer-span boundary.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, QaDataset, TaskKind, TextDataset, Vocabulary};
use crate::error::{Error, Result};
use crate::minmin::NoiseSet;
use crate::search::Modification;

pub const HISTOGRAM_BINS: usize = 10;

/// Substitute words grouped by the class of the instance they landed in.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelBow {
    /// class id → set of substitute word ids
    pub sets: BTreeMap<usize, BTreeSet<u32>>,
    /// class id → substitute word id → occurrence count
    pub counts: BTreeMap<usize, BTreeMap<u32, usize>>,
    /// class id → substitute word id → probability (sums to 1 per nonempty class)
    pub freqs: BTreeMap<usize, BTreeMap<u32, f64>>,
}

/// Group a noise set's substitutes by instance label. Every class present in
/// the dataset gets an entry, possibly empty.
pub fn label_bows(set: &NoiseSet, ds: &TextDataset) -> Result<LabelBow> {
    let labels: HashMap<&str, usize> =
        ds.instances.iter().map(|i| (i.id.as_str(), i.label)).collect();
    let mut sets: BTreeMap<usize, BTreeSet<u32>> = BTreeMap::new();
    let mut counts: BTreeMap<usize, BTreeMap<u32, usize>> = BTreeMap::new();
    for k in 0..ds.num_classes {
        sets.entry(k).or_default();
        counts.entry(k).or_default();
    }
    for m in &set.modifications {
        let label = labels.get(m.instance_id.as_str()).ok_or_else(|| {
            Error::CorruptNoiseSet(format!(
                "instance `{}` not present in the dataset",
                m.instance_id
            ))
        })?;
        sets.get_mut(label).expect("all classes seeded").insert(m.substitute);
        *counts
            .get_mut(label)
            .expect("all classes seeded")
            .entry(m.substitute)
            .or_default() += 1;
    }
    let freqs = counts
        .iter()
        .map(|(&k, c)| {
            let total: usize = c.values().sum();
            let f = c
                .iter()
                .map(|(&w, &n)| (w, n as f64 / total.max(1) as f64))
                .collect();
            (k, f)
        })
        .collect();
    Ok(LabelBow { sets, counts, freqs })
}

/// Jaccard similarity of two sets; an empty union counts as 0.
pub fn jaccard(a: &BTreeSet<u32>, b: &BTreeSet<u32>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JaccardStats {
    /// Mean over all unordered class pairs.
    pub mean: f64,
    /// Unnormalized sum of pair similarities.
    pub sum: f64,
    pub pairs: usize,
}

/// Average pairwise Jaccard similarity between class bags.
pub fn avg_jaccard(bow: &LabelBow) -> Result<JaccardStats> {
    let classes: Vec<&BTreeSet<u32>> = bow.sets.values().collect();
    let k = classes.len();
    if k < 2 {
        return Err(Error::InvalidData(format!(
            "pairwise similarity needs at least 2 classes, got {k}"
        )));
    }
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..k {
        for j in (i + 1)..k {
            sum += jaccard(classes[i], classes[j]);
            pairs += 1;
        }
    }
    Ok(JaccardStats { mean: sum / pairs as f64, sum, pairs })
}

/// Per class, the summed probability of the k most frequent substitutes
/// (ties broken by ascending word id). Classes without substitutes are
/// absent from the result. Counts are summed before the single division,
/// so full coverage yields exactly 1.
pub fn topk_cumulative(bow: &LabelBow, k: usize) -> Result<BTreeMap<usize, f64>> {
    if k == 0 {
        return Err(Error::InvalidData("top-k mass needs k >= 1".into()));
    }
    let mut out = BTreeMap::new();
    for (&class, counts) in &bow.counts {
        if counts.is_empty() {
            continue;
        }
        // sort by count descending, word id ascending
        let mut entries: Vec<(&u32, &usize)> = counts.iter().collect();
        entries.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        let total: usize = counts.values().sum();
        let top: usize = entries.iter().take(k).map(|(_, &n)| n).sum();
        out.insert(class, top as f64 / total as f64);
    }
    Ok(out)
}

/// Per class, the k most frequent substitutes with their probabilities,
/// rendered as token strings.
pub fn top_substitutes(
    bow: &LabelBow,
    k: usize,
    vocab: &Vocabulary,
) -> Result<BTreeMap<usize, Vec<(String, f64)>>> {
    let mut out = BTreeMap::new();
    for (&class, freqs) in &bow.freqs {
        if freqs.is_empty() {
            continue;
        }
        let mut entries: Vec<(&u32, &f64)> = freqs.iter().collect();
        entries.sort_by(|a, b| b.1.partial_cmp(a.1).unwrap().then(a.0.cmp(b.0)));
        let words = entries
            .iter()
            .take(k)
            .map(|(&w, &p)| {
                let token = vocab.token(w).ok_or_else(|| {
                    Error::InvalidData(format!("substitute id {w} outside vocabulary"))
                })?;
                Ok((token.to_string(), p))
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(class, words);
    }
    Ok(out)
}

fn instance_lengths(ds: &Dataset) -> HashMap<&str, usize> {
    match ds {
        Dataset::Text(d) => d.instances.iter().map(|i| (i.id.as_str(), i.tokens.len())).collect(),
        Dataset::Qa(d) => d.instances.iter().map(|i| (i.id.as_str(), i.passage.len())).collect(),
    }
}

/// Relative position of each modification: `p/(T−1)`, with first word → 0,
/// last word → 1, and single-token instances defined as 0.
pub fn relative_positions(set: &NoiseSet, ds: &Dataset) -> Result<Vec<(String, f64)>> {
    let lengths = instance_lengths(ds);
    set.modifications
        .iter()
        .map(|m| {
            let &len = lengths.get(m.instance_id.as_str()).ok_or_else(|| {
                Error::CorruptNoiseSet(format!(
                    "instance `{}` not present in the dataset",
                    m.instance_id
                ))
            })?;
            if m.position >= len {
                return Err(Error::CorruptNoiseSet(format!(
                    "position {} outside instance `{}` of length {len}",
                    m.position, m.instance_id
                )));
            }
            let rel = if len <= 1 { 0.0 } else { m.position as f64 / (len - 1) as f64 };
            Ok((m.instance_id.clone(), rel))
        })
        .collect()
}

/// Ten-bin histogram over [0, 1]; masses sum to 1 when any positions exist
/// (1.0 falls in the last bin).
pub fn position_histogram(rels: &[(String, f64)]) -> Vec<f64> {
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    for &(_, r) in rels {
        let bin = ((r * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        counts[bin] += 1;
    }
    let total = rels.len();
    counts
        .into_iter()
        .map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect()
}

/// Token distance from a modification to the nearest answer-span boundary.
pub fn answer_distance(m: &Modification, span: (usize, usize)) -> usize {
    let d_start = m.position.abs_diff(span.0);
    let d_end = m.position.abs_diff(span.1);
    d_start.min(d_end)
}

/// Distance → modification count over a QA noise set.
pub fn answer_distance_stats(
    set: &NoiseSet,
    ds: &QaDataset,
) -> Result<BTreeMap<usize, usize>> {
    let spans: HashMap<&str, (usize, usize)> = ds
        .instances
        .iter()
        .map(|i| (i.id.as_str(), (i.answer_start, i.answer_end)))
        .collect();
    let mut out: BTreeMap<usize, usize> = BTreeMap::new();
    for m in &set.modifications {
        let span = spans.get(m.instance_id.as_str()).ok_or_else(|| {
            Error::CorruptNoiseSet(format!(
                "instance `{}` not present in the dataset",
                m.instance_id
            ))
        })?;
        *out.entry(answer_distance(m, *span)).or_default() += 1;
    }
    Ok(out)
}

/// Full per-noise-set report, serializable as JSON or flat CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub milestone: usize,
    pub seed: u64,
    pub config_sha: String,
    pub task: TaskKind,
    pub num_instances: usize,
    pub num_modifications: usize,
    pub top_k: usize,
    /// Classification only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jaccard: Option<JaccardStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topk_cumulative: Option<BTreeMap<usize, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_substitutes: Option<BTreeMap<usize, Vec<(String, f64)>>>,
    /// Fractional masses over ten relative-position bins.
    pub position_histogram: Vec<f64>,
    /// Per modification: instance id and relative position in [0, 1].
    pub relative_positions: Vec<(String, f64)>,
    /// QA only: answer-boundary distance → count, and the ≤1 fraction.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer_distances: Option<BTreeMap<usize, usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub answer_distance_within_one: Option<f64>,
}

/// Compute every applicable statistic for one noise set.
pub fn analyze(
    set: &NoiseSet,
    ds: &Dataset,
    vocab: &Vocabulary,
    top_k: usize,
    seed: u64,
    config_sha: &str,
) -> Result<AnalysisReport> {
    let rels = relative_positions(set, ds)?;
    let mut report = AnalysisReport {
        milestone: set.milestone,
        seed,
        config_sha: config_sha.to_string(),
        task: ds.task(),
        num_instances: ds.len(),
        num_modifications: set.modifications.len(),
        top_k,
        jaccard: None,
        topk_cumulative: None,
        top_substitutes: None,
        position_histogram: position_histogram(&rels),
        relative_positions: rels,
        answer_distances: None,
        answer_distance_within_one: None,
    };
    match ds {
        Dataset::Text(d) => {
            let bow = label_bows(set, d)?;
            report.jaccard = Some(avg_jaccard(&bow)?);
            report.topk_cumulative = Some(topk_cumulative(&bow, top_k)?);
            report.top_substitutes = Some(top_substitutes(&bow, top_k, vocab)?);
        }
        Dataset::Qa(d) => {
            let dists = answer_distance_stats(set, d)?;
            let total: usize = dists.values().sum();
            let close: usize = dists
                .iter()
                .filter(|(&d, _)| d <= 1)
                .map(|(_, &c)| c)
                .sum();
            report.answer_distance_within_one =
                Some(if total == 0 { 0.0 } else { close as f64 / total as f64 });
            report.answer_distances = Some(dists);
        }
    }
    Ok(report)
}

impl AnalysisReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let mut buf = serde_json::to_vec_pretty(self)?;
        buf.push(b'\n');
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Flat `statistic,key,value` rows for plotting.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["statistic", "key", "value"])?;
        let mut row = |stat: &str, key: String, value: f64| -> Result<()> {
            w.write_record([stat, &key, &value.to_string()])?;
            Ok(())
        };
        row("milestone", String::new(), self.milestone as f64)?;
        row("num_instances", String::new(), self.num_instances as f64)?;
        row("num_modifications", String::new(), self.num_modifications as f64)?;
        if let Some(j) = &self.jaccard {
            row("avg_jaccard", String::new(), j.mean)?;
            row("jaccard_sum", String::new(), j.sum)?;
            row("jaccard_pairs", String::new(), j.pairs as f64)?;
        }
        if let Some(tc) = &self.topk_cumulative {
            for (class, mass) in tc {
                row(&format!("top{}_cumulative", self.top_k), class.to_string(), *mass)?;
            }
        }
        for (bin, mass) in self.position_histogram.iter().enumerate() {
            row("position_histogram", format!("{:.1}", bin as f64 / 10.0), *mass)?;
        }
        for (id, rel) in &self.relative_positions {
            row("relative_position", id.clone(), *rel)?;
        }
        if let Some(d) = &self.answer_distances {
            for (dist, count) in d {
                row("answer_distance", dist.to_string(), *count as f64)?;
            }
        }
        if let Some(f) = self.answer_distance_within_one {
            row("answer_distance_within_one", String::new(), f)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TextInstance;

    fn set_of(ids: &[u32]) -> BTreeSet<u32> {
        ids.iter().copied().collect()
    }

    #[test]
    fn jaccard_matches_hand_examples() {
        assert_eq!(jaccard(&set_of(&[2, 3]), &set_of(&[2, 3])), 1.0);
        assert_eq!(jaccard(&set_of(&[2, 3]), &set_of(&[4, 5])), 0.0);
        let third = jaccard(&set_of(&[2, 3]), &set_of(&[3, 4]));
        assert!((third - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(jaccard(&set_of(&[]), &set_of(&[])), 0.0);
    }

    fn tiny_dataset() -> TextDataset {
        TextDataset {
            num_classes: 2,
            instances: vec![
                TextInstance { id: "a0".into(), tokens: vec![2, 3, 4, 5, 6], label: 0 },
                TextInstance { id: "a1".into(), tokens: vec![2, 3, 4], label: 0 },
                TextInstance { id: "b0".into(), tokens: vec![7, 8, 9], label: 1 },
                TextInstance { id: "b1".into(), tokens: vec![7, 8], label: 1 },
            ],
        }
    }

    fn mods(entries: &[(&str, usize, u32)]) -> NoiseSet {
        NoiseSet {
            milestone: 0,
            step: 0,
            modifications: entries
                .iter()
                .map(|&(id, p, s)| Modification {
                    instance_id: id.into(),
                    position: p,
                    substitute: s,
                })
                .collect(),
        }
    }

    #[test]
    fn label_bows_group_by_class_and_normalize() {
        let ds = tiny_dataset();
        let set = mods(&[("a0", 0, 10), ("a1", 1, 10), ("b0", 0, 11), ("b1", 1, 12)]);
        let bow = label_bows(&set, &ds).unwrap();
        assert_eq!(bow.sets[&0], set_of(&[10]));
        assert_eq!(bow.sets[&1], set_of(&[11, 12]));
        assert_eq!(bow.freqs[&0][&10], 1.0);
        let sum: f64 = bow.freqs[&1].values().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        let stats = avg_jaccard(&bow).unwrap();
        assert_eq!(stats.mean, 0.0);
        assert_eq!(stats.pairs, 1);
    }

    #[test]
    fn topk_mass_follows_the_hand_example() {
        // frequencies 0.5 / 0.3 / 0.2 → top-2 mass 0.8
        let ds = TextDataset {
            num_classes: 2,
            instances: (0..11)
                .map(|i| TextInstance {
                    id: format!("i{i}"),
                    tokens: vec![2, 3],
                    label: usize::from(i == 10),
                })
                .collect(),
        };
        let entries: Vec<(String, usize, u32)> = (0..10)
            .map(|i| {
                let w = if i < 5 { 20 } else if i < 8 { 21 } else { 22 };
                (format!("i{i}"), 0usize, w as u32)
            })
            .chain([("i10".to_string(), 0usize, 30u32)])
            .collect();
        let set = NoiseSet {
            milestone: 0,
            step: 0,
            modifications: entries
                .into_iter()
                .map(|(id, p, s)| Modification { instance_id: id, position: p, substitute: s })
                .collect(),
        };
        let bow = label_bows(&set, &ds).unwrap();
        let top2 = topk_cumulative(&bow, 2).unwrap();
        assert!((top2[&0] - 0.8).abs() < 1e-12);
        assert_eq!(top2[&1], 1.0);
        // k beyond the number of distinct words saturates at exactly 1
        let top9 = topk_cumulative(&bow, 9).unwrap();
        assert!((top9[&0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn relative_positions_and_histogram_follow_the_definition() {
        let ds = Dataset::Text(tiny_dataset());
        let set = mods(&[("a0", 0, 10), ("a0", 2, 10), ("a1", 2, 10), ("b1", 1, 11)]);
        // note: duplicate-instance sets are fine for position stats
        let rels = relative_positions(&set, &ds).unwrap();
        let values: Vec<f64> = rels.iter().map(|r| r.1).collect();
        assert_eq!(values, vec![0.0, 0.5, 1.0, 1.0]);
        let hist = position_histogram(&rels);
        assert_eq!(hist.len(), HISTOGRAM_BINS);
        assert!((hist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(hist[0], 0.25);
        assert_eq!(hist[5], 0.25);
        assert_eq!(hist[9], 0.5);
    }

    #[test]
    fn answer_distances_match_hand_examples() {
        let m = |p: usize| Modification { instance_id: "q".into(), position: p, substitute: 5 };
        assert_eq!(answer_distance(&m(2), (3, 4)), 1);
        assert_eq!(answer_distance(&m(9), (3, 4)), 5);
        assert_eq!(answer_distance(&m(5), (3, 4)), 1);
        assert_eq!(answer_distance(&m(3), (3, 4)), 0);
    }

    #[test]
    fn analyze_produces_task_appropriate_sections() {
        let mut vocab = Vocabulary::new();
        for i in 0..30 {
            vocab.get_or_insert(&format!("w{i}"));
        }
        let ds = Dataset::Text(tiny_dataset());
        let set = mods(&[("a0", 0, 10), ("b0", 0, 11)]);
        let report = analyze(&set, &ds, &vocab, 5, 7, "cafe").unwrap();
        assert!(report.jaccard.is_some());
        assert!(report.answer_distances.is_none());
        assert_eq!(report.num_modifications, 2);
        let json = serde_json::to_string(&report).unwrap();
        let back: AnalysisReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let mut csv_buf = Vec::new();
        report.write_csv(&mut csv_buf).unwrap();
        let text = String::from_utf8(csv_buf).unwrap();
        assert!(text.starts_with("statistic,key,value\n"));
        assert!(text.contains("avg_jaccard"));
    }
}
