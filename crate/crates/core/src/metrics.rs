//! Evaluation: macro precision/recall/F1, Hits@k, frequency-bucket and
//! zero-shot breakdowns, and a Jaccard histogram of top-1 errors.
//!
//! Scoring is single-label multi-class on the top-ranked tag. Per-class
//! ratios with a zero denominator are 0. Predictions are put in canonical
//! `(sid, mention_index)` order before anything is summed, so reports do not
//! depend on input order.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{zero_shot_tags, BucketEdges, Corpus, TagId, Taxonomy};
use crate::matcher::Prediction;
use crate::text::words;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no predictions to evaluate")]
    EmptyPredictions,
    #[error("class set is missing gold tag {0:?}")]
    MissingClass(String),
    #[error("prediction for {sid}#{mention_index} has an empty ranking")]
    EmptyRanking { sid: String, mention_index: usize },
    #[error("invalid histogram bins: {0}")]
    InvalidBins(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrediction {
    pub sid: String,
    pub mention_index: usize,
    pub gold: TagId,
    pub prediction: Prediction,
}

impl LabeledPrediction {
    pub fn top1(&self) -> &TagId {
        self.prediction
            .top1()
            .expect("labeled predictions carry a nonempty ranking")
    }

    pub fn is_correct(&self) -> bool {
        self.top1() == &self.gold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_tag: BTreeMap<TagId, TagScore>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check_rankings(preds: &[LabeledPrediction]) -> Result<(), MetricsError> {
    match preds.iter().find(|p| p.prediction.ranked.is_empty()) {
        Some(p) => Err(MetricsError::EmptyRanking {
            sid: p.sid.clone(),
            mention_index: p.mention_index,
        }),
        None => Ok(()),
    }
}

/// Macro-averaged precision, recall and F1 over `class_set`.
///
/// For class `c`: TP counts gold = c and top-1 = c, FP counts top-1 = c with
/// another gold, FN counts gold = c with another top-1.
pub fn macro_metrics(
    preds: &[LabeledPrediction],
    class_set: &BTreeSet<TagId>,
) -> Result<MacroMetrics, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::EmptyPredictions);
    }
    check_rankings(preds)?;
    if let Some(p) = preds.iter().find(|p| !class_set.contains(&p.gold)) {
        return Err(MetricsError::MissingClass(p.gold.to_string()));
    }
    // (tp, fp, fn, support) per class
    let mut counts: BTreeMap<&TagId, (usize, usize, usize, usize)> =
        class_set.iter().map(|c| (c, (0, 0, 0, 0))).collect();
    for p in preds {
        let top1 = p.top1();
        let gold = counts.get_mut(&p.gold).expect("checked above");
        gold.3 += 1;
        if top1 == &p.gold {
            gold.0 += 1;
        } else {
            gold.2 += 1;
            if let Some(pred) = counts.get_mut(top1) {
                pred.1 += 1;
            }
        }
    }
    let per_tag: BTreeMap<TagId, TagScore> = counts
        .into_iter()
        .map(|(tag, (tp, fp, fn_, support))| {
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            (
                tag.clone(),
                TagScore {
                    precision,
                    recall,
                    f1: harmonic(precision, recall),
                    support,
                },
            )
        })
        .collect();
    let n = per_tag.len() as f64;
    let mean = |f: fn(&TagScore) -> f64| per_tag.values().map(f).sum::<f64>() / n;
    Ok(MacroMetrics {
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
        per_tag,
    })
}

/// Fraction of predictions whose gold tag is among the first `k` ranked.
/// Returns 0 for an empty slice.
pub fn hits_at_k(preds: &[LabeledPrediction], k: usize) -> f64 {
    let hits = preds
        .iter()
        .filter(|p| p.prediction.ranked.iter().take(k).any(|s| s.tag == p.gold))
        .count();
    ratio(hits, preds.len())
}

/// Jaccard similarity of the word sets of two documentations. Words are
/// lowercased with punctuation stripped.
pub fn jaccard(a: &str, b: &str) -> f64 {
    let a: HashSet<String> = words(a).collect();
    let b: HashSet<String> = words(b).collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Bin edges partitioning `[0, 1]`; every bin is half-open except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBins(Vec<f64>);

impl HistogramBins {
    pub fn new(edges: Vec<f64>) -> Result<Self, MetricsError> {
        if edges.len() < 2 || edges[0] != 0.0 || edges[edges.len() - 1] != 1.0 {
            return Err(MetricsError::InvalidBins(
                "edges must start at 0 and end at 1".into(),
            ));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MetricsError::InvalidBins(
                "edges must be strictly increasing".into(),
            ));
        }
        Ok(HistogramBins(edges))
    }

    pub fn uniform(count: usize) -> Self {
        let count = count.max(1);
        HistogramBins((0..=count).map(|i| i as f64 / count as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bin_of(&self, value: f64) -> usize {
        let last = self.len() - 1;
        (0..last).find(|&i| value < self.0[i + 1]).unwrap_or(last)
    }
}

impl Default for HistogramBins {
    fn default() -> Self {
        HistogramBins::uniform(5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Histogram of `jaccard(doc(top1), doc(gold))` over top-1 errors.
pub fn error_histogram(
    preds: &[LabeledPrediction],
    taxonomy: &Taxonomy,
    bins: &HistogramBins,
) -> Vec<HistogramBin> {
    let mut counts = vec![0usize; bins.len()];
    let doc = |t: &TagId| {
        taxonomy
            .documentation(t)
            .map(str::to_owned)
            .unwrap_or_else(|| t.to_string())
    };
    for p in preds
        .iter()
        .filter(|p| !p.prediction.ranked.is_empty() && !p.is_correct())
    {
        let score = jaccard(&doc(p.top1()), &doc(&p.gold));
        counts[bins.bin_of(score)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lo: bins.0[i],
            hi: bins.0[i + 1],
            count,
        })
        .collect()
}

/// Metrics restricted to the examples whose gold tag belongs to one group.
/// Metric fields are `None` when the group has no examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub label: String,
    pub macro_f1: Option<f64>,
    pub hits_at_1: Option<f64>,
    /// Distinct gold tags among the group's examples.
    pub tag_count: usize,
    pub support: usize,
}

/// Which classes macro averages run over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSetMode {
    /// Distinct gold tags of the evaluated examples.
    #[default]
    GoldTags,
    /// Every taxonomy tag.
    Taxonomy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Hits@k is reported for every k in `1..=max_k`.
    pub max_k: usize,
    pub class_set: ClassSetMode,
    pub include_others_in_macro: bool,
    pub include_others_in_hits: bool,
    pub bucket_edges: BucketEdges,
    pub bins: HistogramBins,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            max_k: 5,
            class_set: ClassSetMode::GoldTags,
            include_others_in_macro: true,
            include_others_in_hits: true,
            bucket_edges: BucketEdges::default(),
            bins: HistogramBins::default(),
        }
    }
}

impl EvalOptions {
    fn class_set(&self, preds: &[&LabeledPrediction], taxonomy: &Taxonomy) -> BTreeSet<TagId> {
        let mut set: BTreeSet<TagId> = match self.class_set {
            ClassSetMode::GoldTags => preds.iter().map(|p| p.gold.clone()).collect(),
            ClassSetMode::Taxonomy => taxonomy.sorted_tags().into_iter().collect(),
        };
        if !self.include_others_in_macro {
            set.remove(&TagId::others());
        }
        set
    }

    fn macro_examples(&self, preds: &[&LabeledPrediction]) -> Vec<LabeledPrediction> {
        preds
            .iter()
            .filter(|p| self.include_others_in_macro || !p.gold.is_others())
            .map(|p| (*p).clone())
            .collect()
    }

    fn hits_examples(&self, preds: &[&LabeledPrediction]) -> Vec<LabeledPrediction> {
        preds
            .iter()
            .filter(|p| self.include_others_in_hits || !p.gold.is_others())
            .map(|p| (*p).clone())
            .collect()
    }
}

fn group_report(
    label: String,
    members: &[&LabeledPrediction],
    taxonomy: &Taxonomy,
    options: &EvalOptions,
) -> Result<GroupReport, MetricsError> {
    let tag_count = members
        .iter()
        .map(|p| &p.gold)
        .collect::<BTreeSet<_>>()
        .len();
    let macro_preds = options.macro_examples(members);
    let macro_f1 = if macro_preds.is_empty() {
        None
    } else {
        let refs: Vec<&LabeledPrediction> = macro_preds.iter().collect();
        let classes = options.class_set(&refs, taxonomy);
        Some(macro_metrics(&macro_preds, &classes)?.f1)
    };
    let hits_preds = options.hits_examples(members);
    let hits_at_1 = (!hits_preds.is_empty()).then(|| hits_at_k(&hits_preds, 1));
    Ok(GroupReport {
        label,
        macro_f1,
        hits_at_1,
        tag_count,
        support: members.len(),
    })
}

/// Per-frequency-bucket and zero-shot reports. Buckets come from the train
/// frequency of each example's gold tag.
pub fn breakdown_reports(
    preds: &[LabeledPrediction],
    corpus: &Corpus,
    options: &EvalOptions,
) -> Result<(Vec<GroupReport>, GroupReport), MetricsError> {
    check_rankings(preds)?;
    let edges = &options.bucket_edges;
    let mut buckets = Vec::new();
    for label in edges.labels() {
        let members: Vec<&LabeledPrediction> = preds
            .iter()
            .filter(|p| edges.label_for(corpus.train_frequency(&p.gold)) == label)
            .collect();
        buckets.push(group_report(label, &members, corpus.taxonomy(), options)?);
    }
    let unseen = zero_shot_tags(corpus);
    let members: Vec<&LabeledPrediction> =
        preds.iter().filter(|p| unseen.contains(&p.gold)).collect();
    let zero_shot = group_report("zero-shot".into(), &members, corpus.taxonomy(), options)?;
    Ok((buckets, zero_shot))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroSummary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTagRow {
    pub tag: TagId,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Full evaluation output, serialized as the report document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "macro")]
    pub macro_scores: MacroSummary,
    pub hits: BTreeMap<usize, f64>,
    pub per_tag: Vec<PerTagRow>,
    pub buckets: Vec<GroupReport>,
    pub zero_shot: GroupReport,
    pub jaccard_histogram: Vec<HistogramBin>,
    pub n_examples: usize,
    /// Mentions excluded because their backend calls failed.
    pub n_failures: usize,
}

impl EvalReport {
    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.get(&k).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text summary for terminals.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let pct = |v: f64| format!("{:6.2}", v * 100.0);
        let opt = |v: Option<f64>| v.map(pct).unwrap_or_else(|| "     -".into());
        let _ = writeln!(
            out,
            "examples: {}  failures: {}",
            self.n_examples, self.n_failures
        );
        let _ = writeln!(
            out,
            "macro P {}  R {}  F1 {}",
            pct(self.macro_scores.precision),
            pct(self.macro_scores.recall),
            pct(self.macro_scores.f1)
        );
        for (k, v) in &self.hits {
            let _ = writeln!(out, "hits@{k:<3} {}", pct(*v));
        }
        let _ = writeln!(
            out,
            "\n{:<12} {:>8} {:>8} {:>6} {:>8}",
            "bucket", "macroF1", "hits@1", "tags", "support"
        );
        for g in self.buckets.iter().chain(std::iter::once(&self.zero_shot)) {
            let label = if std::ptr::eq(g, &self.zero_shot) {
                "[zero-shot]"
            } else {
                g.label.as_str()
            };
            let _ = writeln!(
                out,
                "{:<12} {:>8} {:>8} {:>6} {:>8}",
                label,
                opt(g.macro_f1),
                opt(g.hits_at_1),
                g.tag_count,
                g.support
            );
        }
        let _ = writeln!(out, "\njaccard(top1, gold) over errors");
        for b in &self.jaccard_histogram {
            let close = if b.hi == 1.0 { ']' } else { ')' };
            let _ = writeln!(out, "[{:.2}, {:.2}{close} {}", b.lo, b.hi, b.count);
        }
        out
    }
}

/// Computes the whole report for a set of predictions drawn from `corpus`.
pub fn evaluate(
    preds: &[LabeledPrediction],
    corpus: &Corpus,
    options: &EvalOptions,
) -> Result<EvalReport, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::EmptyPredictions);
    }
    check_rankings(preds)?;
    let mut sorted: Vec<&LabeledPrediction> = preds.iter().collect();
    sorted.sort_by(|a, b| (&a.sid, a.mention_index).cmp(&(&b.sid, b.mention_index)));
    let canonical: Vec<LabeledPrediction> = sorted.iter().map(|p| (*p).clone()).collect();

    let macro_preds = options.macro_examples(&sorted);
    let macro_refs: Vec<&LabeledPrediction> = macro_preds.iter().collect();
    let classes = options.class_set(&macro_refs, corpus.taxonomy());
    let macro_scores = if macro_preds.is_empty() {
        MacroMetrics {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            per_tag: BTreeMap::new(),
        }
    } else {
        macro_metrics(&macro_preds, &classes)?
    };

    let hits_preds = options.hits_examples(&sorted);
    let hits = (1..=options.max_k.max(1))
        .map(|k| (k, hits_at_k(&hits_preds, k)))
        .collect();

    let (buckets, zero_shot) = breakdown_reports(&canonical, corpus, options)?;
    Ok(EvalReport {
        macro_scores: MacroSummary {
            precision: macro_scores.precision,
            recall: macro_scores.recall,
            f1: macro_scores.f1,
        },
        hits,
        per_tag: macro_scores
            .per_tag
            .into_iter()
            .map(|(tag, s)| PerTagRow {
                tag,
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
                support: s.support,
            })
            .collect(),
        buckets,
        zero_shot,
        jaccard_histogram: error_histogram(&canonical, corpus.taxonomy(), &options.bins),
        n_examples: canonical.len(),
        n_failures: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::ScoredTag;

    pub(crate) fn lp(i: usize, gold: &str, ranked: &[&str]) -> LabeledPrediction {
        LabeledPrediction {
            sid: format!("s{i:04}"),
            mention_index: 0,
            gold: TagId::new(gold),
            prediction: Prediction {
                ranked: ranked
                    .iter()
                    .enumerate()
                    .map(|(r, t)| ScoredTag {
                        tag: TagId::new(t),
                        score: 1.0 - r as f64 * 0.1,
                    })
                    .collect(),
                query_text: String::new(),
            },
        }
    }

    fn set(tags: &[&str]) -> BTreeSet<TagId> {
        tags.iter().map(|t| TagId::new(t)).collect()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let preds = vec![
            lp(0, "a", &["a"]),
            lp(1, "b", &["b", "a"]),
            lp(2, "a", &["a"]),
        ];
        let m = macro_metrics(&preds, &set(&["a", "b"])).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn two_class_worked_example() {
        let preds = vec![lp(0, "a", &["a"]), lp(1, "a", &["b"]), lp(2, "b", &["b"])];
        let m = macro_metrics(&preds, &set(&["a", "b"])).unwrap();
        let a = m.per_tag[&TagId::new("a")];
        let b = m.per_tag[&TagId::new("b")];
        assert_eq!((a.precision, a.recall), (1.0, 0.5));
        assert_eq!((b.precision, b.recall), (0.5, 1.0));
        assert!((a.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((b.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.support + b.support, 3);
    }

    #[test]
    fn absent_class_scores_zero() {
        let preds = vec![lp(0, "a", &["a"])];
        let m = macro_metrics(&preds, &set(&["a", "z"])).unwrap();
        assert_eq!(m.per_tag[&TagId::new("z")].f1, 0.0);
        assert_eq!(m.f1, 0.5);
    }

    #[test]
    fn macro_errors() {
        assert_eq!(
            macro_metrics(&[], &set(&["a"])).unwrap_err(),
            MetricsError::EmptyPredictions
        );
        assert_eq!(
            macro_metrics(&[lp(0, "b", &["b"])], &set(&["a"])).unwrap_err(),
            MetricsError::MissingClass("b".into())
        );
        assert!(matches!(
            macro_metrics(&[lp(0, "a", &[])], &set(&["a"])),
            Err(MetricsError::EmptyRanking { .. })
        ));
    }

    #[test]
    fn hits_when_gold_is_second() {
        let preds = vec![lp(0, "a", &["b", "a"]), lp(1, "c", &["a", "c", "b"])];
        assert_eq!(hits_at_k(&preds, 1), 0.0);
        assert_eq!(hits_at_k(&preds, 2), 1.0);
        let all = vec![lp(0, "a", &["a"]), lp(1, "b", &["b"])];
        assert_eq!(hits_at_k(&all, 1), 1.0);
    }

    #[test]
    fn jaccard_values() {
        assert_eq!(jaccard("Common stock, par.", "common STOCK par"), 1.0);
        assert_eq!(jaccard("a b", "c d"), 0.0);
        assert_eq!(
            jaccard(
                "common stock dividends per share cash paid",
                "common stock dividends per share declared"
            ),
            0.625
        );
        assert_eq!(jaccard("a a b", "a b b"), 1.0);
    }

    #[test]
    fn histogram_bins() {
        let bins = HistogramBins::default();
        assert_eq!(bins.len(), 5);
        assert_eq!(bins.bin_of(0.0), 0);
        assert_eq!(bins.bin_of(0.2), 1);
        assert_eq!(bins.bin_of(0.625), 3);
        assert_eq!(bins.bin_of(0.6), 3);
        assert_eq!(bins.bin_of(1.0), 4);
        assert!(HistogramBins::new(vec![0.0, 0.5]).is_err());
        assert!(HistogramBins::new(vec![0.0, 0.7, 0.5, 1.0]).is_err());
    }

    fn dividends_taxonomy() -> Taxonomy {
        use crate::corpus::TagRecord;
        Taxonomy::new([
            TagRecord {
                tag_id: TagId::new("paid"),
                documentation: "common stock dividends per share cash paid".into(),
            },
            TagRecord {
                tag_id: TagId::new("declared"),
                documentation: "common stock dividends per share declared".into(),
            },
        ])
        .unwrap()
    }

    #[test]
    fn histogram_counts_only_errors() {
        let tax = dividends_taxonomy();
        let bins = HistogramBins::default();
        let correct = vec![lp(0, "paid", &["paid"]), lp(1, "declared", &["declared"])];
        assert!(error_histogram(&correct, &tax, &bins)
            .iter()
            .all(|b| b.count == 0));

        let one = vec![
            lp(0, "paid", &["declared", "paid"]),
            lp(1, "paid", &["paid"]),
        ];
        let h = error_histogram(&one, &tax, &bins);
        assert_eq!(
            h.iter().map(|b| b.count).collect::<Vec<_>>(),
            [0, 0, 0, 1, 0]
        );
        assert_eq!((h[3].lo, h[3].hi), (0.6, 0.8));
    }

    #[test]
    fn near_miss_errors_land_in_top_bins() {
        let tax = dividends_taxonomy();
        let preds: Vec<_> = (0..10)
            .map(|i| {
                if i % 2 == 0 {
                    lp(i, "paid", &["declared"])
                } else {
                    lp(i, "declared", &["declared"])
                }
            })
            .collect();
        let h = error_histogram(&preds, &tax, &HistogramBins::default());
        let high: usize = h.iter().filter(|b| b.lo >= 0.6).map(|b| b.count).sum();
        let total: usize = h.iter().map(|b| b.count).sum();
        assert_eq!(total, 5);
        assert!(high as f64 / total as f64 >= 0.6);
    }
}
