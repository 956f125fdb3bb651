//! Numeral-annotated statements and the XBRL tag taxonomy.
//!
//! Both inputs are line-delimited JSON. A dataset line looks like
//!
//! ```text
//! {"sid": "s1", "split": "train", "text": "...", "numerals": [{"surface": "4.54", "start": 10, "end": 14, "tag": "earnings per share basic"}]}
//! ```
//!
//! and a taxonomy line like `{"tag": "...", "documentation": "..."}`.
//! Offsets count Unicode scalar values, not bytes. The reserved `others`
//! label is a regular taxonomy entry whose documentation is the literal
//! `others`; it is added automatically when the taxonomy file omits it.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{normalize_documentation, normalize_tag_name};

/// Tag id and documentation of the reserved label for untagged numerals.
pub const OTHERS: &str = "others";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("{file} line {line}: malformed record: {message}")]
    Malformed {
        file: &'static str,
        line: usize,
        message: String,
    },
    #[error("dataset line {line}: numeral {surface:?} does not match text span [{start}, {end}) of statement {sid}")]
    SpanMismatch {
        line: usize,
        sid: String,
        surface: String,
        start: usize,
        end: usize,
    },
    #[error("dataset line {line}: numeral {surface:?} in statement {sid} contains no digit")]
    NotNumeric {
        line: usize,
        sid: String,
        surface: String,
    },
    #[error("dataset line {line}: numerals overlap in statement {sid}")]
    OverlappingMentions { line: usize, sid: String },
    #[error("dataset line {line}: unknown gold tag {tag:?} in statement {sid}")]
    UnknownTag {
        line: usize,
        sid: String,
        tag: String,
    },
    #[error("dataset line {line}: duplicate sid {sid:?}")]
    DuplicateSid { line: usize, sid: String },
    #[error("taxonomy line {line}: duplicate tag {tag:?}")]
    DuplicateTag { line: usize, tag: String },
    #[error("taxonomy line {line}: documentation of {tag:?} duplicates that of {other:?}")]
    DuplicateDocumentation {
        line: usize,
        tag: String,
        other: String,
    },
    #[error("{file} line {line}: empty {field}")]
    EmptyField {
        file: &'static str,
        line: usize,
        field: &'static str,
    },
    #[error("taxonomy line {line}: the `others` tag must have documentation exactly \"others\"")]
    InvalidOthers { line: usize },
    #[error("invalid bucket edges: {0}")]
    InvalidBucketEdges(String),
}

/// Normalized tag name: lowercase words separated by single spaces.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TagId(String);

impl TagId {
    pub fn new(name: &str) -> Self {
        TagId(normalize_tag_name(name))
    }

    pub fn others() -> Self {
        TagId(OTHERS.to_owned())
    }

    pub fn is_others(&self) -> bool {
        self.0 == OTHERS
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TagId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TagId {
    fn from(s: &str) -> Self {
        TagId::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NumeralMention {
    pub surface: String,
    /// Inclusive character offset.
    pub start: usize,
    /// Exclusive character offset.
    pub end: usize,
    pub gold_tag: TagId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub sid: String,
    pub text: String,
    pub mentions: Vec<NumeralMention>,
    pub split: Split,
}

impl Statement {
    /// Slice of `text` between two character offsets.
    pub fn char_slice(&self, start: usize, end: usize) -> Option<&str> {
        char_slice(&self.text, start, end)
    }
}

pub(crate) fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut offsets = text.char_indices().map(|(i, _)| i).chain(Some(text.len()));
    let from = offsets.nth(start)?;
    let to = if end == start {
        from
    } else {
        offsets.nth(end - start - 1)?
    };
    Some(&text[from..to])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagRecord {
    #[serde(rename = "tag")]
    pub tag_id: TagId,
    pub documentation: String,
}

/// Bijective tag ↔ documentation registry.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    records: Vec<TagRecord>,
    by_tag: HashMap<TagId, usize>,
    by_doc: HashMap<String, usize>,
}

impl Taxonomy {
    /// Validates the records and appends the `others` entry when missing.
    pub fn new(records: impl IntoIterator<Item = TagRecord>) -> Result<Self, CorpusError> {
        Self::build(records.into_iter().enumerate().map(|(i, r)| (i + 1, r)))
    }

    fn build(records: impl Iterator<Item = (usize, TagRecord)>) -> Result<Self, CorpusError> {
        let mut taxonomy = Taxonomy {
            records: Vec::new(),
            by_tag: HashMap::new(),
            by_doc: HashMap::new(),
        };
        let mut last_line = 0;
        for (line, record) in records {
            taxonomy.insert(record, line)?;
            last_line = line;
        }
        if !taxonomy.by_tag.contains_key(&TagId::others()) {
            taxonomy.insert(
                TagRecord {
                    tag_id: TagId::others(),
                    documentation: OTHERS.to_owned(),
                },
                last_line + 1,
            )?;
        }
        Ok(taxonomy)
    }

    fn insert(&mut self, record: TagRecord, line: usize) -> Result<(), CorpusError> {
        let tag_id = TagId::new(record.tag_id.as_str());
        let documentation = record.documentation.trim().to_owned();
        if tag_id.as_str().is_empty() {
            return Err(CorpusError::EmptyField {
                file: "taxonomy",
                line,
                field: "tag",
            });
        }
        if documentation.is_empty() {
            return Err(CorpusError::EmptyField {
                file: "taxonomy",
                line,
                field: "documentation",
            });
        }
        if tag_id.is_others() && documentation != OTHERS {
            return Err(CorpusError::InvalidOthers { line });
        }
        if self.by_tag.contains_key(&tag_id) {
            return Err(CorpusError::DuplicateTag {
                line,
                tag: tag_id.0,
            });
        }
        let doc_key = normalize_documentation(&documentation);
        if let Some(&other) = self.by_doc.get(&doc_key) {
            return Err(CorpusError::DuplicateDocumentation {
                line,
                tag: tag_id.0,
                other: self.records[other].tag_id.0.clone(),
            });
        }
        let idx = self.records.len();
        self.by_tag.insert(tag_id.clone(), idx);
        self.by_doc.insert(doc_key, idx);
        self.records.push(TagRecord {
            tag_id,
            documentation,
        });
        Ok(())
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, CorpusError> {
        let records = jsonl_lines(bytes, "taxonomy")?
            .into_iter()
            .map(|(line, text)| {
                serde_json::from_str::<TagRecord>(text)
                    .map(|r| (line, r))
                    .map_err(|e| CorpusError::Malformed {
                        file: "taxonomy",
                        line,
                        message: e.to_string(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::build(records.into_iter())
    }

    /// One JSON object per line, in registration order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("tag record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TagRecord] {
        &self.records
    }

    pub fn get(&self, tag: &TagId) -> Option<&TagRecord> {
        self.by_tag.get(tag).map(|&i| &self.records[i])
    }

    pub fn contains(&self, tag: &TagId) -> bool {
        self.by_tag.contains_key(tag)
    }

    pub fn documentation(&self, tag: &TagId) -> Option<&str> {
        self.get(tag).map(|r| r.documentation.as_str())
    }

    /// Inverse of [`Taxonomy::documentation`], comparing normalized text.
    pub fn tag_for_documentation(&self, documentation: &str) -> Option<&TagId> {
        self.by_doc
            .get(&normalize_documentation(documentation))
            .map(|&i| &self.records[i].tag_id)
    }

    /// All tag ids in ascending order.
    pub fn sorted_tags(&self) -> Vec<TagId> {
        let mut tags: Vec<_> = self.records.iter().map(|r| r.tag_id.clone()).collect();
        tags.sort();
        tags
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NumeralLine {
    surface: String,
    start: usize,
    end: usize,
    tag: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatementLine {
    sid: String,
    split: Split,
    text: String,
    numerals: Vec<NumeralLine>,
}

/// Validated dataset plus its taxonomy. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Corpus {
    statements: Vec<Statement>,
    taxonomy: Taxonomy,
    tag_frequency: BTreeMap<TagId, usize>,
}

impl Corpus {
    /// Validates statements against the taxonomy. Errors report the
    /// 1-based position of the offending statement as its line.
    pub fn new(statements: Vec<Statement>, taxonomy: Taxonomy) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for (i, statement) in statements.iter().enumerate() {
            let line = i + 1;
            validate_statement(statement, &taxonomy, line)?;
            if !seen.insert(statement.sid.as_str()) {
                return Err(CorpusError::DuplicateSid {
                    line,
                    sid: statement.sid.clone(),
                });
            }
        }
        let mut tag_frequency = BTreeMap::new();
        for statement in statements.iter().filter(|s| s.split == Split::Train) {
            for mention in &statement.mentions {
                *tag_frequency.entry(mention.gold_tag.clone()).or_insert(0) += 1;
            }
        }
        Ok(Corpus {
            statements,
            taxonomy,
            tag_frequency,
        })
    }

    pub fn statements(&self) -> &[Statement] {
        &self.statements
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    /// Gold occurrences per tag over the train split, `others` included.
    pub fn tag_frequency(&self) -> &BTreeMap<TagId, usize> {
        &self.tag_frequency
    }

    pub fn train_frequency(&self, tag: &TagId) -> usize {
        self.tag_frequency.get(tag).copied().unwrap_or(0)
    }

    /// Sum of train-split frequencies, optionally leaving out `others`.
    pub fn train_frequency_total(&self, include_others: bool) -> usize {
        self.tag_frequency
            .iter()
            .filter(|(t, _)| include_others || !t.is_others())
            .map(|(_, c)| c)
            .sum()
    }

    pub fn statement(&self, sid: &str) -> Option<&Statement> {
        self.statements.iter().find(|s| s.sid == sid)
    }

    /// `(statement, mention index, mention)` for every mention in a split,
    /// in file order.
    pub fn mentions(
        &self,
        split: Split,
    ) -> impl Iterator<Item = (&Statement, usize, &NumeralMention)> + '_ {
        self.statements
            .iter()
            .filter(move |s| s.split == split)
            .flat_map(|s| s.mentions.iter().enumerate().map(move |(i, m)| (s, i, m)))
    }

    pub fn gold_tags(&self, split: Split) -> BTreeSet<TagId> {
        self.mentions(split)
            .map(|(_, _, m)| m.gold_tag.clone())
            .collect()
    }

    /// Serializes back into the line-delimited dataset format.
    pub fn to_dataset_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.statements {
            let line = StatementLine {
                sid: s.sid.clone(),
                split: s.split,
                text: s.text.clone(),
                numerals: s
                    .mentions
                    .iter()
                    .map(|m| NumeralLine {
                        surface: m.surface.clone(),
                        start: m.start,
                        end: m.end,
                        tag: m.gold_tag.0.clone(),
                    })
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&line).expect("statement serializes"));
            out.push('\n');
        }
        out
    }
}

fn validate_statement(
    statement: &Statement,
    taxonomy: &Taxonomy,
    line: usize,
) -> Result<(), CorpusError> {
    if statement.sid.is_empty() {
        return Err(CorpusError::EmptyField {
            file: "dataset",
            line,
            field: "sid",
        });
    }
    for m in &statement.mentions {
        if m.start >= m.end || statement.char_slice(m.start, m.end) != Some(m.surface.as_str()) {
            return Err(CorpusError::SpanMismatch {
                line,
                sid: statement.sid.clone(),
                surface: m.surface.clone(),
                start: m.start,
                end: m.end,
            });
        }
        if !m.surface.chars().any(|c| c.is_ascii_digit()) {
            return Err(CorpusError::NotNumeric {
                line,
                sid: statement.sid.clone(),
                surface: m.surface.clone(),
            });
        }
        if !taxonomy.contains(&m.gold_tag) {
            return Err(CorpusError::UnknownTag {
                line,
                sid: statement.sid.clone(),
                tag: m.gold_tag.0.clone(),
            });
        }
    }
    let mut spans: Vec<_> = statement
        .mentions
        .iter()
        .map(|m| (m.start, m.end))
        .collect();
    spans.sort_unstable();
    if spans.windows(2).any(|w| w[1].0 < w[0].1) {
        return Err(CorpusError::OverlappingMentions {
            line,
            sid: statement.sid.clone(),
        });
    }
    Ok(())
}

/// Non-blank lines with their 1-based line numbers.
fn jsonl_lines<'a>(
    bytes: &'a [u8],
    file: &'static str,
) -> Result<Vec<(usize, &'a str)>, CorpusError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count()
            + 1;
        CorpusError::Malformed {
            file,
            line,
            message: "invalid UTF-8".to_owned(),
        }
    })?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

/// Parses and validates a dataset against its taxonomy.
pub fn parse_corpus(dataset: &[u8], taxonomy: &[u8]) -> Result<Corpus, CorpusError> {
    let taxonomy = Taxonomy::parse(taxonomy)?;
    let mut statements = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in jsonl_lines(dataset, "dataset")? {
        let record: StatementLine =
            serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                file: "dataset",
                line: line_no,
                message: e.to_string(),
            })?;
        let statement = Statement {
            sid: record.sid,
            text: record.text,
            split: record.split,
            mentions: record
                .numerals
                .into_iter()
                .map(|n| NumeralMention {
                    surface: n.surface,
                    start: n.start,
                    end: n.end,
                    gold_tag: TagId::new(&n.tag),
                })
                .collect(),
        };
        validate_statement(&statement, &taxonomy, line_no)?;
        if !seen.insert(statement.sid.clone()) {
            return Err(CorpusError::DuplicateSid {
                line: line_no,
                sid: statement.sid,
            });
        }
        statements.push(statement);
    }
    Corpus::new(statements, taxonomy)
}

/// Tags that are gold in the test split but never in train or validation.
pub fn zero_shot_tags(corpus: &Corpus) -> BTreeSet<TagId> {
    let mut seen = corpus.gold_tags(Split::Train);
    seen.extend(corpus.gold_tags(Split::Validation));
    corpus
        .gold_tags(Split::Test)
        .into_iter()
        .filter(|t| !t.is_others() && !seen.contains(t))
        .collect()
}

/// Label of the bucket holding tags that never occur in training.
pub const ZERO_SHOT_BUCKET: &str = "zero-shot";

/// Inclusive upper bounds of the frequency buckets after the zero-shot one.
/// Counts above the last edge fall into an open-ended `>N` bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketEdges(Vec<usize>);

impl BucketEdges {
    pub fn new(edges: Vec<usize>) -> Result<Self, CorpusError> {
        if edges.is_empty() {
            return Err(CorpusError::InvalidBucketEdges("no edges".into()));
        }
        if edges[0] == 0 {
            return Err(CorpusError::InvalidBucketEdges(
                "edges must be positive".into(),
            ));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CorpusError::InvalidBucketEdges(
                "edges must be strictly increasing".into(),
            ));
        }
        Ok(BucketEdges(edges))
    }

    pub fn edges(&self) -> &[usize] {
        &self.0
    }

    /// Every bucket label, lowest frequency first.
    pub fn labels(&self) -> Vec<String> {
        let mut labels = vec![ZERO_SHOT_BUCKET.to_owned()];
        let mut lo = 1;
        for &hi in &self.0 {
            labels.push(range_label(lo, hi));
            lo = hi + 1;
        }
        labels.push(format!(">{}", self.0[self.0.len() - 1]));
        labels
    }

    pub fn label_for(&self, count: usize) -> String {
        if count == 0 {
            return ZERO_SHOT_BUCKET.to_owned();
        }
        let mut lo = 1;
        for &hi in &self.0 {
            if count <= hi {
                return range_label(lo, hi);
            }
            lo = hi + 1;
        }
        format!(">{}", self.0[self.0.len() - 1])
    }
}

fn range_label(lo: usize, hi: usize) -> String {
    if lo == hi {
        lo.to_string()
    } else {
        format!("{lo}–{hi}")
    }
}

impl Default for BucketEdges {
    fn default() -> Self {
        BucketEdges(vec![5, 10, 50, 100])
    }
}

impl FromStr for BucketEdges {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let edges = s
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CorpusError::InvalidBucketEdges(e.to_string()))?;
        BucketEdges::new(edges)
    }
}

/// Bucket label for a training-set frequency.
pub fn frequency_bucket(count: usize, edges: &BucketEdges) -> String {
    edges.label_for(count)
}
