//! Row retrieval: sparse, dense-from-file, fused and oracle rankers,
//! Recall@K and budgeted context construction.

mod prune;
pub mod sparse;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::EvidenceSet;
use crate::table::{content_tokens, Table};

pub use prune::{budget_prune, PrunedContext};
pub use sparse::Bm25Params;

pub const DEFAULT_RRF_K: usize = 60;
pub const DEFAULT_KS: [usize; 4] = [1, 2, 5, 10];

#[derive(Debug, Error, PartialEq)]
pub enum RetrievalError {
    #[error("vector dimension {found} differs from {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{found} row vectors for a table of {expected} rows")]
    RowCountMismatch { expected: usize, found: usize },
    #[error("non-finite vector entry")]
    NonFinite,
    #[error("rankings cover different row sets")]
    RowSetMismatch,
    #[error("evidence set is empty")]
    EmptyEvidence,
    #[error("unknown retriever {0:?}")]
    UnknownRetriever(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Header,
    Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDocument {
    pub row_index: usize,
    /// Header tokens followed by cell tokens, column by column, skipping
    /// columns whose cell is empty.
    pub tokens: Vec<String>,
    pub field_tokens: BTreeMap<Field, Vec<String>>,
}

impl RowDocument {
    pub fn field(&self, f: Field) -> &[String] {
        self.field_tokens.get(&f).map_or(&[], Vec::as_slice)
    }
}

pub fn build_row_docs(t: &Table) -> Vec<RowDocument> {
    let header_tokens: Vec<Vec<String>> = t.headers().iter().map(|h| content_tokens(h)).collect();
    let header_field: Vec<String> = header_tokens.iter().flatten().cloned().collect();
    t.rows()
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut tokens = Vec::new();
            let mut cells = Vec::new();
            for (h, c) in header_tokens.iter().zip(row) {
                let ct = content_tokens(c);
                if !ct.is_empty() {
                    tokens.extend(h.iter().cloned());
                    tokens.extend(ct.iter().cloned());
                    cells.extend(ct);
                }
            }
            let field_tokens =
                BTreeMap::from([(Field::Header, header_field.clone()), (Field::Cell, cells)]);
            RowDocument {
                row_index: i,
                tokens,
                field_tokens,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparseKind {
    Tfidf,
    Bm25,
    Bm25f,
    CellBm25,
}

impl SparseKind {
    pub const ALL: [SparseKind; 4] = [
        SparseKind::Tfidf,
        SparseKind::Bm25,
        SparseKind::Bm25f,
        SparseKind::CellBm25,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SparseKind::Tfidf => "tfidf",
            SparseKind::Bm25 => "bm25",
            SparseKind::Bm25f => "bm25f",
            SparseKind::CellBm25 => "cell_bm25",
        }
    }
}

impl fmt::Display for SparseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SparseKind {
    type Err = RetrievalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SparseKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| RetrievalError::UnknownRetriever(s.to_owned()))
    }
}

/// Rows best first. Scores are non-increasing; equal scores keep ascending
/// row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub retriever: String,
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
}

impl Ranking {
    /// Sort rows `0..scores.len()` by descending score, ascending index on ties.
    pub fn from_scores(retriever: impl Into<String>, scores: &[f64]) -> Ranking {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let sorted = order.iter().map(|&i| scores[i]).collect();
        Ranking {
            retriever: retriever.into(),
            order,
            scores: sorted,
        }
    }

    /// 1-based rank of `row`.
    pub fn rank_of(&self, row: usize) -> Option<usize> {
        self.order.iter().position(|&r| r == row).map(|p| p + 1)
    }

    pub fn row_set(&self) -> BTreeSet<usize> {
        self.order.iter().copied().collect()
    }
}

pub fn sparse_scores(question: &str, docs: &[RowDocument], t: &Table, kind: SparseKind) -> Vec<f64> {
    let q = content_tokens(question);
    let p = Bm25Params::default();
    match kind {
        SparseKind::Tfidf => {
            let d: Vec<Vec<String>> = docs.iter().map(|d| d.tokens.clone()).collect();
            sparse::tfidf_scores(&q, &d)
        }
        SparseKind::Bm25 => {
            let d: Vec<Vec<String>> = docs.iter().map(|d| d.tokens.clone()).collect();
            sparse::bm25_scores(&q, &d, p)
        }
        SparseKind::Bm25f => sparse::bm25f_scores(&q, docs, p),
        SparseKind::CellBm25 => {
            let cells: Vec<Vec<Vec<String>>> = docs
                .iter()
                .map(|d| t.rows()[d.row_index].iter().map(|c| content_tokens(c)).collect())
                .collect();
            sparse::cell_bm25_scores(&q, &cells, p)
        }
    }
}

/// Rank every row of `t` for `question`.
pub fn rank(question: &str, t: &Table, kind: SparseKind) -> Ranking {
    let docs = build_row_docs(t);
    Ranking::from_scores(kind.name(), &sparse_scores(question, &docs, t, kind))
}

/// Externally produced question and row vectors for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub id: String,
    pub model_tag: String,
    pub question_vec: Vec<f64>,
    pub row_vecs: Vec<Vec<f64>>,
}

impl EmbeddingTable {
    pub fn validate(&self, n_rows: Option<usize>) -> Result<(), RetrievalError> {
        let dim = self.question_vec.len();
        if let Some(n) = n_rows {
            if n != self.row_vecs.len() {
                return Err(RetrievalError::RowCountMismatch {
                    expected: n,
                    found: self.row_vecs.len(),
                });
            }
        }
        for v in &self.row_vecs {
            if v.len() != dim {
                return Err(RetrievalError::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
        }
        let finite = self
            .question_vec
            .iter()
            .chain(self.row_vecs.iter().flatten())
            .all(|x| x.is_finite());
        if finite {
            Ok(())
        } else {
            Err(RetrievalError::NonFinite)
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn rank_dense(emb: &EmbeddingTable) -> Result<Ranking, RetrievalError> {
    emb.validate(None)?;
    let scores: Vec<f64> = emb.row_vecs.iter().map(|r| cosine(&emb.question_vec, r)).collect();
    Ok(Ranking::from_scores(format!("dense:{}", emb.model_tag), &scores))
}

/// One external score per row, e.g. from a reranker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub scores: Vec<f64>,
}

/// Reciprocal-rank fusion with 1-based ranks.
pub fn fuse_hybrid(a: &Ranking, b: &Ranking, k: usize) -> Result<Ranking, RetrievalError> {
    let rows = a.row_set();
    if rows != b.row_set() || rows.len() != a.order.len() || rows.len() != b.order.len() {
        return Err(RetrievalError::RowSetMismatch);
    }
    let mut fused: BTreeMap<usize, f64> = BTreeMap::new();
    for r in [a, b] {
        for (pos, &row) in r.order.iter().enumerate() {
            *fused.entry(row).or_insert(0.0) += 1.0 / (k + pos + 1) as f64;
        }
    }
    let mut order: Vec<(usize, f64)> = fused.into_iter().collect();
    order.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    Ok(Ranking {
        retriever: format!("rrf({},{})", a.retriever, b.retriever),
        order: order.iter().map(|x| x.0).collect(),
        scores: order.iter().map(|x| x.1).collect(),
    })
}

/// Oracle ranking: evidence rows first, then the rest, each ascending.
pub fn rank_sql_gold(evidence: &EvidenceSet, n_rows: usize) -> Ranking {
    let ev: Vec<usize> = evidence.rows.iter().copied().filter(|&r| r < n_rows).collect();
    let rest = (0..n_rows).filter(|r| !evidence.rows.contains(r));
    let order: Vec<usize> = ev.iter().copied().chain(rest).collect();
    let scores = order
        .iter()
        .map(|r| if evidence.rows.contains(r) { 1.0 } else { 0.0 })
        .collect();
    Ranking {
        retriever: "sql_gold".to_owned(),
        order,
        scores,
    }
}

/// 1-based position of the first evidence row in the ranking.
pub fn first_hit_rank(rank: &Ranking, evidence: &EvidenceSet) -> Option<usize> {
    rank.order
        .iter()
        .position(|r| evidence.rows.contains(r))
        .map(|p| p + 1)
}

pub fn recall_at_k(
    rank: &Ranking,
    evidence: &EvidenceSet,
    ks: &[usize],
) -> Result<BTreeMap<usize, u8>, RetrievalError> {
    if evidence.rows.is_empty() {
        return Err(RetrievalError::EmptyEvidence);
    }
    let first = first_hit_rank(rank, evidence);
    Ok(ks
        .iter()
        .map(|&k| (k, u8::from(first.is_some_and(|f| f <= k))))
        .collect())
}

/// Mean hit@k over covered examples, with the coverage they represent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallSummary {
    pub retriever: String,
    pub n_examples: usize,
    pub n_covered: usize,
    pub coverage: Option<f64>,
    pub recall: BTreeMap<usize, Option<f64>>,
}

pub fn summarize_recall(
    retriever: &str,
    n_examples: usize,
    hits: &[BTreeMap<usize, u8>],
    ks: &[usize],
) -> RecallSummary {
    let n = hits.len();
    let recall = ks
        .iter()
        .map(|&k| {
            let s: usize = hits.iter().map(|h| h.get(&k).copied().unwrap_or(0) as usize).sum();
            (k, (n > 0).then(|| s as f64 / n as f64))
        })
        .collect();
    RecallSummary {
        retriever: retriever.to_owned(),
        n_examples,
        n_covered: n,
        coverage: (n_examples > 0).then(|| n as f64 / n_examples as f64),
        recall,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitRecord {
    /// 1-based rank of the first evidence row, if any.
    pub hit_rank: Option<usize>,
    pub em: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub n: usize,
    pub em: Option<f64>,
    pub f1: Option<f64>,
}

impl Stratum {
    fn of<'a>(recs: impl Iterator<Item = &'a HitRecord>) -> Stratum {
        let (mut n, mut em, mut f1) = (0usize, 0.0, 0.0);
        for r in recs {
            n += 1;
            em += r.em;
            f1 += r.f1;
        }
        let mean = |s: f64| (n > 0).then(|| s / n as f64);
        Stratum {
            n,
            em: mean(em),
            f1: mean(f1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataReport {
    pub hit_at_1: Stratum,
    pub miss_at_1: Stratum,
    /// Buckets "1", "2", "3-5", "6-10" and "miss" (no hit in the top 10).
    pub buckets: BTreeMap<String, Stratum>,
}

pub const HIT_BUCKETS: [&str; 5] = ["1", "2", "3-5", "6-10", "miss"];

pub fn hit_bucket(hit_rank: Option<usize>) -> &'static str {
    match hit_rank {
        Some(1) => "1",
        Some(2) => "2",
        Some(3..=5) => "3-5",
        Some(6..=10) => "6-10",
        _ => "miss",
    }
}

pub fn hit_rank_stratify(records: &[HitRecord]) -> StrataReport {
    let buckets = HIT_BUCKETS
        .iter()
        .map(|&b| {
            (
                b.to_owned(),
                Stratum::of(records.iter().filter(|r| hit_bucket(r.hit_rank) == b)),
            )
        })
        .collect();
    StrataReport {
        hit_at_1: Stratum::of(records.iter().filter(|r| r.hit_rank == Some(1))),
        miss_at_1: Stratum::of(records.iter().filter(|r| r.hit_rank != Some(1))),
        buckets,
    }
}

pub(crate) fn cmp_desc_then_index(a: (usize, f64), b: (usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}
