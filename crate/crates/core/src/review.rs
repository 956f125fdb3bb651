//! Human review workflow: candidate lists for annotators and agreement
//! statistics over their choices.
//!
//! A task shows the machine's top-k tags for one numeral, with the gold tag
//! swapped into the last slot when the machine missed it, in a seeded random
//! order. Annotators only ever receive a [`TaskView`], which carries neither
//! the gold tag nor the machine's top choice.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, TagId};
use crate::metrics::LabeledPrediction;
use crate::text::seeded_hash;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReviewError {
    #[error("review tasks need k >= 2, got {0}")]
    InvalidK(usize),
    #[error("prediction refers to unknown mention {sid}#{mention_index}")]
    UnknownMention { sid: String, mention_index: usize },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("{chosen:?} is not a candidate of task {task_id:?}")]
    InvalidChoice { task_id: String, chosen: String },
    #[error("no task has exactly two annotators")]
    NoDoublyAnnotatedTasks,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub tag: TagId,
    pub documentation: String,
}

/// Character range of the numeral within the statement text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Highlight {
    pub start: usize,
    pub end: usize,
}

/// Server-side task record, gold included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub task_id: String,
    pub sid: String,
    pub mention_index: usize,
    pub text: String,
    pub highlight: Highlight,
    pub candidates: Vec<Candidate>,
    pub machine_top1: TagId,
    pub gold: TagId,
}

impl ReviewTask {
    pub fn has_candidate(&self, tag: &TagId) -> bool {
        self.candidates.iter().any(|c| &c.tag == tag)
    }

    pub fn machine_correct(&self) -> bool {
        self.machine_top1 == self.gold
    }

    pub fn view(&self) -> TaskView {
        TaskView {
            task_id: self.task_id.clone(),
            text: self.text.clone(),
            highlight: self.highlight,
            candidates: self.candidates.clone(),
        }
    }
}

/// What an annotator's client receives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskView {
    pub task_id: String,
    pub text: String,
    pub highlight: Highlight,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub task_id: String,
    pub annotator: String,
    pub chosen: TagId,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

pub fn task_id(sid: &str, mention_index: usize) -> String {
    format!("{sid}#{mention_index}")
}

/// One task per prediction with `min(k, taxonomy size)` candidates.
pub fn build_review_tasks(
    preds: &[LabeledPrediction],
    corpus: &Corpus,
    k: usize,
    seed: u64,
) -> Result<Vec<ReviewTask>, ReviewError> {
    if k < 2 {
        return Err(ReviewError::InvalidK(k));
    }
    let taxonomy = corpus.taxonomy();
    let slots = k.min(taxonomy.len());
    let all_tags = taxonomy.sorted_tags();
    let mut sorted: Vec<&LabeledPrediction> = preds.iter().collect();
    sorted.sort_by(|a, b| (&a.sid, a.mention_index).cmp(&(&b.sid, b.mention_index)));

    let mut tasks = Vec::with_capacity(sorted.len());
    for p in sorted {
        let unknown = || ReviewError::UnknownMention {
            sid: p.sid.clone(),
            mention_index: p.mention_index,
        };
        let statement = corpus.statement(&p.sid).ok_or_else(unknown)?;
        let mention = statement
            .mentions
            .get(p.mention_index)
            .ok_or_else(unknown)?;

        let mut tags: Vec<TagId> = Vec::with_capacity(slots);
        for s in &p.prediction.ranked {
            if tags.len() == slots {
                break;
            }
            if !tags.contains(&s.tag) {
                tags.push(s.tag.clone());
            }
        }
        // short rankings are padded in tag order
        for t in &all_tags {
            if tags.len() == slots {
                break;
            }
            if !tags.contains(t) {
                tags.push(t.clone());
            }
        }
        if !tags.contains(&p.gold) {
            tags[slots - 1] = p.gold.clone();
        }
        let id = task_id(&p.sid, p.mention_index);
        let mut rng = ChaCha8Rng::seed_from_u64(seeded_hash(seed, &id));
        tags.shuffle(&mut rng);

        tasks.push(ReviewTask {
            task_id: id,
            sid: p.sid.clone(),
            mention_index: p.mention_index,
            text: statement.text.clone(),
            highlight: Highlight {
                start: mention.start,
                end: mention.end,
            },
            candidates: tags
                .into_iter()
                .map(|tag| Candidate {
                    documentation: taxonomy
                        .documentation(&tag)
                        .unwrap_or(tag.as_str())
                        .to_owned(),
                    tag,
                })
                .collect(),
            machine_top1: p.top1().clone(),
            gold: p.gold.clone(),
        });
    }
    Ok(tasks)
}

/// Checks an annotation against its task.
pub fn validate_annotation(
    tasks: &HashMap<String, ReviewTask>,
    record: &AnnotationRecord,
) -> Result<(), ReviewError> {
    let task = tasks
        .get(&record.task_id)
        .ok_or_else(|| ReviewError::UnknownTask(record.task_id.clone()))?;
    if !task.has_candidate(&record.chosen) {
        return Err(ReviewError::InvalidChoice {
            task_id: record.task_id.clone(),
            chosen: record.chosen.to_string(),
        });
    }
    Ok(())
}

/// Agreement figures over one set of doubly-annotated tasks. Fractions are
/// `None` when the set is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub tasks: usize,
    /// Tasks where both annotators chose the gold tag.
    pub both_correct: usize,
    /// Individual choices equal to gold (two per task).
    pub correct_choices: usize,
    /// Tasks where both annotators chose the same candidate.
    pub agreeing: usize,
    pub both_correct_rate: Option<f64>,
    pub choice_accuracy: Option<f64>,
    pub agreement_rate: Option<f64>,
}

impl AgreementStats {
    fn from_counts(
        tasks: usize,
        both_correct: usize,
        correct_choices: usize,
        agreeing: usize,
    ) -> Self {
        let frac = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        AgreementStats {
            tasks,
            both_correct,
            correct_choices,
            agreeing,
            both_correct_rate: frac(both_correct, tasks),
            choice_accuracy: frac(correct_choices, 2 * tasks),
            agreement_rate: frac(agreeing, tasks),
        }
    }

    pub fn empty() -> Self {
        Self::from_counts(0, 0, 0, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub overall: AgreementStats,
    pub machine_correct: AgreementStats,
    pub machine_incorrect: AgreementStats,
    /// Annotated tasks left out because they do not have exactly two annotators.
    pub excluded_tasks: usize,
    /// Annotations naming an unknown task or a non-candidate tag.
    pub invalid_annotations: usize,
}

impl AgreementReport {
    pub fn empty() -> Self {
        AgreementReport {
            overall: AgreementStats::empty(),
            machine_correct: AgreementStats::empty(),
            machine_incorrect: AgreementStats::empty(),
            excluded_tasks: 0,
            invalid_annotations: 0,
        }
    }
}

/// Agreement over tasks annotated by exactly two annotators, overall and
/// split by whether the machine's top choice was correct. When an annotator
/// labels a task more than once, the latest record (by timestamp, then input
/// order) counts.
pub fn agreement_report(
    annotations: &[AnnotationRecord],
    tasks: &[ReviewTask],
) -> Result<AgreementReport, ReviewError> {
    let by_id: HashMap<&str, &ReviewTask> = tasks.iter().map(|t| (t.task_id.as_str(), t)).collect();
    let mut invalid = 0;
    // task id -> annotator -> (timestamp, choice)
    let mut choices: BTreeMap<&str, BTreeMap<&str, (u64, &TagId)>> = BTreeMap::new();
    for a in annotations {
        match by_id.get(a.task_id.as_str()) {
            Some(task) if task.has_candidate(&a.chosen) => {
                let slot = choices
                    .entry(task.task_id.as_str())
                    .or_default()
                    .entry(a.annotator.as_str())
                    .or_insert((a.timestamp, &a.chosen));
                if a.timestamp >= slot.0 {
                    *slot = (a.timestamp, &a.chosen);
                }
            }
            _ => invalid += 1,
        }
    }

    let mut excluded = 0;
    // [machine correct, machine incorrect] x (tasks, both, correct, agree)
    let mut counts = [[0usize; 4]; 2];
    for (id, by_annotator) in &choices {
        if by_annotator.len() != 2 {
            excluded += 1;
            continue;
        }
        let task = by_id[id];
        let mut picks = by_annotator.values().map(|(_, c)| *c);
        let (a, b) = (picks.next().expect("two"), picks.next().expect("two"));
        let row = &mut counts[usize::from(!task.machine_correct())];
        let correct = usize::from(*a == task.gold) + usize::from(*b == task.gold);
        row[0] += 1;
        row[1] += usize::from(correct == 2);
        row[2] += correct;
        row[3] += usize::from(a == b);
    }
    let total: [usize; 4] = std::array::from_fn(|i| counts[0][i] + counts[1][i]);
    if total[0] == 0 {
        return Err(ReviewError::NoDoublyAnnotatedTasks);
    }
    let stats = |c: [usize; 4]| AgreementStats::from_counts(c[0], c[1], c[2], c[3]);
    Ok(AgreementReport {
        overall: stats(total),
        machine_correct: stats(counts[0]),
        machine_incorrect: stats(counts[1]),
        excluded_tasks: excluded,
        invalid_annotations: invalid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(id: &str, gold: &str, top1: &str) -> ReviewTask {
        ReviewTask {
            task_id: id.into(),
            sid: id.into(),
            mention_index: 0,
            text: "x 1".into(),
            highlight: Highlight { start: 2, end: 3 },
            candidates: ["a", "b", "c"]
                .iter()
                .map(|t| Candidate {
                    tag: TagId::new(t),
                    documentation: format!("doc {t}"),
                })
                .collect(),
            machine_top1: TagId::new(top1),
            gold: TagId::new(gold),
        }
    }

    fn ann(task: &str, who: &str, chosen: &str) -> AnnotationRecord {
        AnnotationRecord {
            task_id: task.into(),
            annotator: who.into(),
            chosen: TagId::new(chosen),
            timestamp: 0,
        }
    }

    #[test]
    fn three_task_fixture() {
        let tasks = vec![
            task("t1", "a", "a"),
            task("t2", "a", "a"),
            task("t3", "a", "a"),
        ];
        let anns = vec![
            ann("t1", "x", "a"),
            ann("t1", "y", "a"),
            ann("t2", "x", "a"),
            ann("t2", "y", "b"),
            ann("t3", "x", "c"),
            ann("t3", "y", "c"),
        ];
        let r = agreement_report(&anns, &tasks).unwrap();
        assert_eq!(r.overall.both_correct_rate, Some(1.0 / 3.0));
        assert_eq!(r.overall.choice_accuracy, Some(0.5));
        assert_eq!(r.overall.agreement_rate, Some(2.0 / 3.0));
        assert_eq!(r.machine_incorrect.tasks, 0);
        assert_eq!(r.machine_incorrect.agreement_rate, None);
    }

    #[test]
    fn all_gold_is_perfect_in_both_splits() {
        let tasks = vec![task("t1", "a", "a"), task("t2", "b", "c")];
        let anns: Vec<_> = ["t1", "t2"]
            .iter()
            .zip(["a", "b"])
            .flat_map(|(t, g)| [ann(t, "x", g), ann(t, "y", g)])
            .collect();
        let r = agreement_report(&anns, &tasks).unwrap();
        for s in [&r.overall, &r.machine_correct, &r.machine_incorrect] {
            assert_eq!(s.tasks, 1 + usize::from(std::ptr::eq(s, &r.overall)));
            assert_eq!(s.both_correct_rate, Some(1.0));
            assert_eq!(s.choice_accuracy, Some(1.0));
            assert_eq!(s.agreement_rate, Some(1.0));
        }
    }

    #[test]
    fn exclusions_and_invalid_choices() {
        let tasks = vec![task("t1", "a", "a"), task("t2", "a", "b")];
        let anns = vec![
            ann("t1", "x", "a"),
            ann("t1", "y", "b"),
            ann("t2", "x", "a"),
            ann("t2", "y", "zzz"),
            ann("nope", "y", "a"),
        ];
        let r = agreement_report(&anns, &tasks).unwrap();
        assert_eq!(r.overall.tasks, 1);
        assert_eq!(r.excluded_tasks, 1);
        assert_eq!(r.invalid_annotations, 2);
        assert_eq!(
            agreement_report(&anns[2..], &tasks).unwrap_err(),
            ReviewError::NoDoublyAnnotatedTasks
        );
    }

    #[test]
    fn latest_annotation_wins() {
        let tasks = vec![task("t1", "a", "a")];
        let mut first = ann("t1", "x", "b");
        first.timestamp = 1;
        let mut second = ann("t1", "x", "a");
        second.timestamp = 2;
        let anns = vec![second, first, ann("t1", "y", "a")];
        let r = agreement_report(&anns, &tasks).unwrap();
        assert_eq!(r.overall.both_correct, 1);
    }

    #[test]
    fn view_hides_gold() {
        let v = serde_json::to_value(task("t1", "a", "b").view()).unwrap();
        let obj = v.as_object().unwrap();
        assert!(!obj.contains_key("gold"));
        assert!(!obj.contains_key("machine_top1"));
    }
}
