//! Tag matching by exact cosine nearest neighbour over documentation
//! embeddings.
//!
//! Rows of a [`TagIndex`] are unit-normalized and stored in ascending tag
//! order. A query is scored against every row; the top `k` are kept with a
//! bounded heap. Equal scores rank by ascending tag id.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{embed, BackendError, Embedder, GeneratedOutput};
use crate::corpus::{TagId, Taxonomy};
use crate::text::{fnv1a, is_others_literal};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("cannot build an index from an empty taxonomy")]
    EmptyTaxonomy,
    #[error("{0} embedded to the zero vector")]
    ZeroNorm(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("generated text is empty")]
    EmptyQuery,
    #[error("documentation not found in taxonomy: {0:?}")]
    UnknownDocumentation(String),
    #[error("duplicate index row for tag {0:?}")]
    DuplicateTag(String),
    #[error("index does not cover the taxonomy: {0}")]
    TaxonomyMismatch(String),
    #[error("invalid index data: {0}")]
    InvalidData(String),
}

/// What each index row embeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexSource {
    #[default]
    Documentation,
    TagNames,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTag {
    pub tag: TagId,
    pub score: f64,
}

/// Ranked candidate tags for one generated text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub ranked: Vec<ScoredTag>,
    pub query_text: String,
}

impl Prediction {
    pub fn top1(&self) -> Option<&TagId> {
        self.ranked.first().map(|s| &s.tag)
    }

    /// 0-based rank of `tag`, if present.
    pub fn rank_of(&self, tag: &TagId) -> Option<usize> {
        self.ranked.iter().position(|s| &s.tag == tag)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `(a·b) / (‖a‖‖b‖)` clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, MatchError> {
    if a.len() != b.len() {
        return Err(MatchError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(MatchError::ZeroNorm("cosine operand".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Heap entry ordered so that the worst candidate is the maximum.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: f64,
    row: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.row.cmp(&other.row))
    }
}

#[derive(Serialize, Deserialize)]
struct CacheHeader {
    dim: usize,
    tags: Vec<TagId>,
}

#[derive(Deserialize)]
struct PrecomputedLine {
    tag: String,
    vector: Vec<f64>,
}

/// Immutable matrix of unit-normalized tag embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TagIndex {
    tags: Vec<TagId>,
    rows: Vec<f64>,
    dim: usize,
}

impl TagIndex {
    /// Embeds each tag's documentation (or name) once and normalizes the rows.
    pub fn build(
        taxonomy: &Taxonomy,
        embedder: &dyn Embedder,
        source: IndexSource,
    ) -> Result<Self, MatchError> {
        if taxonomy.is_empty() {
            return Err(MatchError::EmptyTaxonomy);
        }
        let tags = taxonomy.sorted_tags();
        let texts: Vec<String> = tags
            .iter()
            .map(|t| match source {
                IndexSource::Documentation => taxonomy
                    .documentation(t)
                    .expect("sorted tags come from the taxonomy")
                    .to_owned(),
                IndexSource::TagNames => t.to_string(),
            })
            .collect();
        let vectors = embed(embedder, &texts)?;
        Self::from_vectors(
            tags.into_iter()
                .zip(vectors.into_iter().map(|v| v.into_values())),
        )
    }

    /// Builds an index from raw vectors; rows are sorted by tag and normalized.
    pub fn from_vectors(
        entries: impl IntoIterator<Item = (TagId, Vec<f64>)>,
    ) -> Result<Self, MatchError> {
        let mut entries: Vec<_> = entries.into_iter().collect();
        if entries.is_empty() {
            return Err(MatchError::EmptyTaxonomy);
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(MatchError::DuplicateTag(w[0].0.to_string()));
        }
        let dim = entries[0].1.len();
        if dim == 0 {
            return Err(MatchError::InvalidData("zero-dimensional vectors".into()));
        }
        let mut tags = Vec::with_capacity(entries.len());
        let mut rows = Vec::with_capacity(entries.len() * dim);
        for (tag, values) in entries {
            if values.len() != dim {
                return Err(MatchError::DimensionMismatch {
                    expected: dim,
                    found: values.len(),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(MatchError::InvalidData(format!(
                    "non-finite value for {tag}"
                )));
            }
            let n = norm(&values);
            if n == 0.0 {
                return Err(MatchError::ZeroNorm(format!("tag {tag:?}")));
            }
            rows.extend(values.iter().map(|v| v / n));
            tags.push(tag);
        }
        Ok(TagIndex { tags, rows, dim })
    }

    /// Reads line-delimited `{"tag", "vector"}` records. Every taxonomy tag
    /// must appear exactly once.
    pub fn from_precomputed(bytes: &[u8], taxonomy: &Taxonomy) -> Result<Self, MatchError> {
        let text =
            std::str::from_utf8(bytes).map_err(|e| MatchError::InvalidData(e.to_string()))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: PrecomputedLine = serde_json::from_str(line)
                .map_err(|e| MatchError::InvalidData(format!("line {}: {e}", i + 1)))?;
            entries.push((TagId::new(&rec.tag), rec.vector));
        }
        let index = Self::from_vectors(entries)?;
        index.check_covers(taxonomy)?;
        Ok(index)
    }

    /// Fails unless the rows are exactly the taxonomy's tags.
    pub fn check_covers(&self, taxonomy: &Taxonomy) -> Result<(), MatchError> {
        let expected = taxonomy.sorted_tags();
        if expected == self.tags {
            return Ok(());
        }
        let missing = expected
            .iter()
            .find(|t| self.tags.binary_search(t).is_err());
        let extra = self.tags.iter().find(|t| !taxonomy.contains(t));
        Err(MatchError::TaxonomyMismatch(match (missing, extra) {
            (Some(m), _) => format!("missing tag {m:?}"),
            (None, Some(e)) => format!("unexpected tag {e:?}"),
            (None, None) => "row order differs".into(),
        }))
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tags(&self) -> &[TagId] {
        &self.tags
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_of(&self, tag: &TagId) -> Option<&[f64]> {
        self.tags.binary_search(tag).ok().map(|i| self.row(i))
    }

    /// Stable hash of the tag list and matrix bits.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.rows.len() * 8 + self.tags.len() * 16);
        for t in &self.tags {
            bytes.extend_from_slice(t.as_str().as_bytes());
            bytes.push(0);
        }
        for v in &self.rows {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        fnv1a(&bytes)
    }

    /// Exact top-`k` by cosine, skipping `exclude` if given.
    pub fn top_k(
        &self,
        query: &[f64],
        k: usize,
        exclude: Option<&TagId>,
    ) -> Result<Vec<ScoredTag>, MatchError> {
        if query.len() != self.dim {
            return Err(MatchError::DimensionMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        let qn = norm(query);
        if qn == 0.0 {
            return Err(MatchError::ZeroNorm("query".into()));
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let skip = exclude.and_then(|t| self.tags.binary_search(t).ok());
        let mut heap = BinaryHeap::with_capacity(k + 1);
        for row in 0..self.tags.len() {
            if Some(row) == skip {
                continue;
            }
            let score = (dot(self.row(row), query) / qn).clamp(-1.0, 1.0);
            let cand = Candidate { score, row };
            if heap.len() < k {
                heap.push(cand);
            } else if let Some(worst) = heap.peek() {
                if cand < *worst {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        Ok(heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| ScoredTag {
                tag: self.tags[c.row].clone(),
                score: c.score,
            })
            .collect())
    }

    /// Serializes as a JSON header line `{"dim", "tags"}` followed by the
    /// row-major matrix as little-endian `f32`.
    pub fn to_cache_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_string(&CacheHeader {
            dim: self.dim,
            tags: self.tags.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(header.len() + 1 + self.rows.len() * 4);
        out.extend_from_slice(header.as_bytes());
        out.push(b'\n');
        for v in &self.rows {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    /// Inverse of [`TagIndex::to_cache_bytes`]. Rows are renormalized after
    /// widening from `f32`.
    pub fn from_cache_bytes(bytes: &[u8]) -> Result<Self, MatchError> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| MatchError::InvalidData("missing cache header".into()))?;
        let header: CacheHeader = serde_json::from_slice(&bytes[..split])
            .map_err(|e| MatchError::InvalidData(format!("cache header: {e}")))?;
        let body = &bytes[split + 1..];
        let expected = header.tags.len() * header.dim * 4;
        if body.len() != expected {
            return Err(MatchError::InvalidData(format!(
                "cache body has {} bytes, expected {expected}",
                body.len()
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let dim = header.dim;
        Self::from_vectors(
            header
                .tags
                .into_iter()
                .enumerate()
                .map(|(i, t)| (t, values[i * dim..(i + 1) * dim].to_vec())),
        )
    }
}

/// Resolves generated text to a ranked prediction.
///
/// The literal `other`/`others` short-circuits to the `others` tag with score
/// 1.0, followed by the best `k - 1` remaining tags. Anything else is
/// embedded and searched exactly. `k` larger than the index is clamped.
pub fn match_generated(
    index: &TagIndex,
    generated: &GeneratedOutput,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Prediction, MatchError> {
    if k == 0 {
        return Err(MatchError::InvalidK);
    }
    let text = generated.text.trim();
    if text.is_empty() {
        return Err(MatchError::EmptyQuery);
    }
    let k = if k > index.len() {
        log::warn!("k={k} exceeds index size {}; clamping", index.len());
        index.len()
    } else {
        k
    };
    let others = TagId::others();
    let ranked = if is_others_literal(text) {
        let mut ranked = vec![ScoredTag {
            tag: others.clone(),
            score: 1.0,
        }];
        if k > 1 {
            let query = embed(embedder, &[text.to_owned()])?.remove(0);
            ranked.extend(index.top_k(query.values(), k - 1, Some(&others))?);
        }
        ranked
    } else {
        let query = embed(embedder, &[text.to_owned()])?.remove(0);
        index.top_k(query.values(), k, None)?
    };
    Ok(Prediction {
        ranked,
        query_text: text.to_owned(),
    })
}

/// Tag whose documentation equals `documentation` (normalized comparison).
pub fn resolve_tag(taxonomy: &Taxonomy, documentation: &str) -> Result<TagId, MatchError> {
    taxonomy
        .tag_for_documentation(documentation)
        .cloned()
        .ok_or_else(|| MatchError::UnknownDocumentation(documentation.to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::testing::make_test_embedder;
    use crate::corpus::TagRecord;

    pub(crate) fn table_one() -> Taxonomy {
        Taxonomy::new([
            TagRecord {
                tag_id: TagId::new("common stocks shares issued"),
                documentation: "Total number of common shares of an entity that have been sold or granted to shareholders (includes common shares that were issued, repurchased and remain in the treasury). These shares represent capital invested by the firm's shareholders and owners, and may be all or only a portion of the number of shares authorized.".into(),
            },
            TagRecord {
                tag_id: TagId::new("common stocks shares authorized"),
                documentation: "The maximum number of common shares permitted to be issued by an entity's charter and bylaws.".into(),
            },
        ])
        .unwrap()
    }

    fn out(text: &str) -> GeneratedOutput {
        GeneratedOutput {
            text: text.into(),
            latency_ms: 0,
        }
    }

    #[test]
    fn cosine_closed_forms() {
        assert_eq!(cosine(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 0.0);
        let diag = cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((diag - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(MatchError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(MatchError::ZeroNorm(_))
        ));
    }

    #[test]
    fn table_one_index_has_unit_rows() {
        let tax = table_one();
        let index = TagIndex::build(
            &tax,
            &make_test_embedder(512, 3),
            IndexSource::Documentation,
        )
        .unwrap();
        assert_eq!(index.len(), 3);
        for i in 0..index.len() {
            assert!((norm(index.row(i)) - 1.0).abs() < 1e-9);
        }
        let mut sorted = index.tags().to_vec();
        sorted.sort();
        assert_eq!(index.tags(), sorted.as_slice());
        let again = TagIndex::build(
            &tax,
            &make_test_embedder(512, 3),
            IndexSource::Documentation,
        )
        .unwrap();
        assert_eq!(index.fingerprint(), again.fingerprint());
        assert_eq!(index, again);
    }

    #[test]
    fn empty_and_zero_rows_rejected() {
        assert_eq!(
            TagIndex::from_vectors(Vec::new()).unwrap_err(),
            MatchError::EmptyTaxonomy
        );
        assert!(matches!(
            TagIndex::from_vectors([(TagId::new("a"), vec![0.0, 0.0])]),
            Err(MatchError::ZeroNorm(_))
        ));
        assert!(matches!(
            TagIndex::from_vectors([(TagId::new("a"), vec![1.0]), (TagId::new("a"), vec![2.0])]),
            Err(MatchError::DuplicateTag(_))
        ));
    }

    #[test]
    fn self_match_scores_one() {
        let tax = table_one();
        let e = make_test_embedder(512, 3);
        let index = TagIndex::build(&tax, &e, IndexSource::Documentation).unwrap();
        let doc = tax
            .documentation(&TagId::new("common stocks shares authorized"))
            .unwrap();
        let p = match_generated(&index, &out(doc), &e, 3).unwrap();
        assert_eq!(
            p.top1(),
            Some(&TagId::new("common stocks shares authorized"))
        );
        assert!((p.ranked[0].score - 1.0).abs() < 1e-12);
        assert_eq!(p.ranked.len(), 3);
    }

    #[test]
    fn others_bypasses_search() {
        let tax = table_one();
        let e = make_test_embedder(512, 3);
        let index = TagIndex::build(&tax, &e, IndexSource::Documentation).unwrap();
        let p = match_generated(&index, &out(" Others"), &e, 2).unwrap();
        assert_eq!(
            p.ranked[0],
            ScoredTag {
                tag: TagId::others(),
                score: 1.0
            }
        );
        assert_eq!(p.ranked.len(), 2);
        assert!(!p.ranked[1].tag.is_others());
        let p = match_generated(&index, &out("other"), &e, 1).unwrap();
        assert_eq!(p.ranked.len(), 1);
    }

    #[test]
    fn k_is_validated_and_clamped() {
        let tax = table_one();
        let e = make_test_embedder(64, 3);
        let index = TagIndex::build(&tax, &e, IndexSource::Documentation).unwrap();
        assert_eq!(
            match_generated(&index, &out("shares"), &e, 0).unwrap_err(),
            MatchError::InvalidK
        );
        assert_eq!(
            match_generated(&index, &out("shares"), &e, 10)
                .unwrap()
                .ranked
                .len(),
            3
        );
        assert!(matches!(
            match_generated(&index, &out("..."), &e, 1),
            Err(MatchError::ZeroNorm(_))
        ));
    }

    #[test]
    fn ties_break_by_ascending_tag() {
        let index = TagIndex::from_vectors([
            (TagId::new("c"), vec![1.0, 0.0]),
            (TagId::new("a"), vec![2.0, 0.0]),
            (TagId::new("b"), vec![0.0, 1.0]),
        ])
        .unwrap();
        let top = index.top_k(&[1.0, 0.0], 3, None).unwrap();
        let tags: Vec<_> = top.iter().map(|s| s.tag.as_str()).collect();
        assert_eq!(tags, ["a", "c", "b"]);
    }

    #[test]
    fn resolve_table_one_documentation() {
        let tax = table_one();
        assert_eq!(
            resolve_tag(&tax, "The maximum number of common shares permitted to be issued by an entity's charter and bylaws.").unwrap(),
            TagId::new("common stocks shares authorized")
        );
        assert_eq!(resolve_tag(&tax, "others").unwrap(), TagId::others());
        assert!(matches!(
            resolve_tag(&tax, "no such documentation"),
            Err(MatchError::UnknownDocumentation(_))
        ));
    }

    #[test]
    fn cache_round_trip() {
        let tax = table_one();
        let index =
            TagIndex::build(&tax, &make_test_embedder(64, 9), IndexSource::Documentation).unwrap();
        let bytes = index.to_cache_bytes();
        let header_end = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&bytes[..header_end]).unwrap();
        assert_eq!(header["dim"], 64);
        assert_eq!(header["tags"].as_array().unwrap().len(), 3);
        assert_eq!(bytes.len() - header_end - 1, 3 * 64 * 4);

        let back = TagIndex::from_cache_bytes(&bytes).unwrap();
        assert_eq!(back.tags(), index.tags());
        for i in 0..3 {
            for (a, b) in back.row(i).iter().zip(index.row(i)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        back.check_covers(&tax).unwrap();
        assert!(TagIndex::from_cache_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn precomputed_must_cover_taxonomy() {
        let tax = table_one();
        let lines = "{\"tag\": \"others\", \"vector\": [1, 0]}\n{\"tag\": \"common stocks shares issued\", \"vector\": [0, 1]}\n";
        assert!(matches!(
            TagIndex::from_precomputed(lines.as_bytes(), &tax),
            Err(MatchError::TaxonomyMismatch(_))
        ));
        let full = format!(
            "{lines}{{\"tag\": \"common stocks shares authorized\", \"vector\": [1, 1]}}\n"
        );
        let index = TagIndex::from_precomputed(full.as_bytes(), &tax).unwrap();
        assert_eq!(index.dim(), 2);
    }
}
