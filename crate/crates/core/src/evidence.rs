//! Evidence rows: answer-string matching, SQL WHERE execution and the hybrid
//! detector, plus coverage and detector validation.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::classifier::cohen_kappa;
use crate::sql::eval::RowEvaluator;
use crate::sql::{classify_simple, SqlError, SqlQuery};
use crate::table::{jaccard, normalize, token_set, values_match, GroundingConfig, Table};

pub const DEFAULT_HYBRID_THETA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceMode {
    AnswerString,
    Sql,
    Hybrid,
}

impl EvidenceMode {
    pub fn name(self) -> &'static str {
        match self {
            EvidenceMode::AnswerString => "answer_string",
            EvidenceMode::Sql => "sql",
            EvidenceMode::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for EvidenceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "answer" | "answer_string" => Ok(EvidenceMode::AnswerString),
            "sql" => Ok(EvidenceMode::Sql),
            "hybrid" => Ok(EvidenceMode::Hybrid),
            other => Err(format!("unknown evidence mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub mode: EvidenceMode,
    pub rows: BTreeSet<usize>,
    pub covered: bool,
}

impl EvidenceSet {
    pub fn new(mode: EvidenceMode, rows: BTreeSet<usize>) -> Self {
        let covered = !rows.is_empty();
        EvidenceSet {
            mode,
            rows,
            covered,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvidenceError {
    #[error("query is not simple (aggregation, grouping or unsupported constructs)")]
    NotSimple,
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error("id sets differ: {0}")]
    IdMismatch(String),
    #[error("judge {judge:?} judged {id} row {row} twice")]
    DuplicateJudgment { judge: String, id: String, row: usize },
}

/// Rows holding a cell that matches any gold value.
pub fn detect_answer_rows(t: &Table, gold: &[String], cfg: &GroundingConfig) -> EvidenceSet {
    let gold: Vec<_> = gold.iter().map(|g| normalize(g, cfg)).collect();
    let rows = t
        .rows()
        .iter()
        .enumerate()
        .filter(|(_, row)| {
            row.iter().any(|c| {
                let v = normalize(c, cfg);
                gold.iter().any(|g| values_match(&v, g, cfg))
            })
        })
        .map(|(i, _)| i)
        .collect();
    EvidenceSet::new(EvidenceMode::AnswerString, rows)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SqlRows {
    pub evidence: EvidenceSet,
    /// Rows where a comparison paired a number with text. They keep the
    /// engine's verdict (numbers order before text) and are reported here.
    pub type_error_rows: Vec<usize>,
}

/// Rows selected by the WHERE clause of a simple query; all rows without one.
pub fn derive_sql_rows(t: &Table, q: &SqlQuery) -> Result<SqlRows, EvidenceError> {
    if !classify_simple(q) {
        return Err(EvidenceError::NotSimple);
    }
    let select = q.select().expect("simple queries are parsed");
    let Some(pred) = &select.where_clause else {
        return Ok(SqlRows {
            evidence: EvidenceSet::new(EvidenceMode::Sql, (0..t.n_rows()).collect()),
            type_error_rows: Vec::new(),
        });
    };
    let ev = RowEvaluator::new(t);
    ev.check_columns(pred)?;
    let mut rows = BTreeSet::new();
    let mut type_error_rows = Vec::new();
    for i in 0..t.n_rows() {
        let out = ev.eval(pred, i);
        if out.matched {
            rows.insert(i);
        }
        if out.mixed_kinds {
            type_error_rows.push(i);
        }
    }
    Ok(SqlRows {
        evidence: EvidenceSet::new(EvidenceMode::Sql, rows),
        type_error_rows,
    })
}

pub fn row_token_set(t: &Table, row: usize) -> HashSet<String> {
    t.rows()[row].iter().flat_map(|c| token_set(c)).collect()
}

/// Answer-string rows plus rows whose question overlap reaches `theta`;
/// when both are empty, the single row of highest overlap (lowest index on
/// ties). Only a table without rows yields an uncovered set.
pub fn detect_hybrid(
    t: &Table,
    question: &str,
    gold: &[String],
    cfg: &GroundingConfig,
    theta: f64,
) -> EvidenceSet {
    let mut rows = detect_answer_rows(t, gold, cfg).rows;
    let q = token_set(question);
    let overlaps: Vec<f64> = (0..t.n_rows())
        .map(|i| jaccard(&q, &row_token_set(t, i)))
        .collect();
    rows.extend(
        overlaps
            .iter()
            .enumerate()
            .filter(|(_, &o)| o >= theta)
            .map(|(i, _)| i),
    );
    if rows.is_empty() && t.n_rows() > 0 {
        let mut best = 0;
        for (i, &o) in overlaps.iter().enumerate() {
            if o > overlaps[best] {
                best = i;
            }
        }
        rows.insert(best);
    }
    EvidenceSet::new(EvidenceMode::Hybrid, rows)
}

/// Fraction of covered sets; `None` for an empty list.
pub fn evidence_coverage<'a>(sets: impl IntoIterator<Item = &'a EvidenceSet>) -> Option<f64> {
    let (mut n, mut covered) = (0usize, 0usize);
    for s in sets {
        n += 1;
        covered += usize::from(s.covered);
    }
    (n > 0).then(|| covered as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorScore {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

/// Micro-averaged row-level precision and recall of `pred` against `gold`.
pub fn validate_detector(
    pred: &BTreeMap<String, EvidenceSet>,
    gold: &BTreeMap<String, EvidenceSet>,
) -> Result<DetectorScore, EvidenceError> {
    if let Some(id) = pred
        .keys()
        .find(|k| !gold.contains_key(*k))
        .or_else(|| gold.keys().find(|k| !pred.contains_key(*k)))
    {
        return Err(EvidenceError::IdMismatch(id.clone()));
    }
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (id, p) in pred {
        let g = &gold[id];
        tp += p.rows.intersection(&g.rows).count();
        np += p.rows.len();
        ng += g.rows.len();
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    Ok(DetectorScore {
        precision: ratio(tp, np),
        recall: ratio(tp, ng),
        true_positives: tp,
        predicted: np,
        gold: ng,
    })
}

/// Evidence JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub id: String,
    pub mode: EvidenceMode,
    pub rows: Vec<usize>,
    pub covered: bool,
}

impl EvidenceRecord {
    pub fn new(id: &str, set: &EvidenceSet) -> Self {
        EvidenceRecord {
            id: id.to_owned(),
            mode: set.mode,
            rows: set.rows.iter().copied().collect(),
            covered: set.covered,
        }
    }

    pub fn to_set(&self) -> EvidenceSet {
        EvidenceSet::new(self.mode, self.rows.iter().copied().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judgment {
    Supported,
    NotSupported,
    Uncertain,
}

/// One audit judgment line: does `row` of example `id` support the answer?
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditJudgment {
    pub id: String,
    pub row: usize,
    pub judgment: Judgment,
    pub judge: String,
}

/// Cohen's kappa between two judges over the (id, row) items both judged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditAgreement {
    pub judge_a: String,
    pub judge_b: String,
    pub n_shared: usize,
    /// `None` when nothing is shared or chance agreement is 1.
    pub kappa: Option<f64>,
}

/// Pairwise agreement for every pair of judges, in judge-name order.
pub fn audit_agreement(judgments: &[AuditJudgment]) -> Result<Vec<AuditAgreement>, EvidenceError> {
    let mut by_judge: BTreeMap<&str, BTreeMap<(&str, usize), Judgment>> = BTreeMap::new();
    for j in judgments {
        let prev = by_judge.entry(&j.judge).or_default().insert((&j.id, j.row), j.judgment);
        if prev.is_some() {
            return Err(EvidenceError::DuplicateJudgment {
                judge: j.judge.clone(),
                id: j.id.clone(),
                row: j.row,
            });
        }
    }
    let judges: Vec<_> = by_judge.iter().collect();
    let mut out = Vec::new();
    for (i, (a, ja)) in judges.iter().enumerate() {
        for (b, jb) in &judges[i + 1..] {
            let (xs, ys): (Vec<Judgment>, Vec<Judgment>) =
                ja.iter().filter_map(|(k, x)| jb.get(k).map(|y| (*x, *y))).unzip();
            out.push(AuditAgreement {
                judge_a: a.to_string(),
                judge_b: b.to_string(),
                n_shared: xs.len(),
                kappa: cohen_kappa(&xs, &ys).ok(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::parse_sql;
    use proptest::prelude::*;

    fn table(rows: &[&[&str]]) -> Table {
        let n = rows.first().map_or(2, |r| r.len());
        Table::new(
            "t",
            (0..n).map(|i| format!("h{i}")).collect(),
            rows.iter()
                .map(|r| r.iter().map(|c| c.to_string()).collect())
                .collect(),
        )
        .unwrap()
    }

    fn g(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn set(rows: &[usize]) -> BTreeSet<usize> {
        rows.iter().copied().collect()
    }

    #[test]
    fn answer_rows() {
        let cfg = GroundingConfig::default();
        let t = table(&[&["7", "x"], &["8", "y"]]);
        assert_eq!(detect_answer_rows(&t, &g(&["7"]), &cfg).rows, set(&[0]));
        let e = detect_answer_rows(&t, &g(&["42"]), &cfg);
        assert!(e.rows.is_empty() && !e.covered);
        let t = table(&[&["New York City"], &["Boston"]]);
        assert_eq!(detect_answer_rows(&t, &g(&["New York"]), &cfg).rows, set(&[0]));
    }

    #[test]
    fn sql_rows() {
        let t = table(&[&["a", "1"], &["b", "4"], &["c", "5"]]);
        let q = parse_sql("SELECT c1 FROM w WHERE c2 > 3").unwrap();
        assert_eq!(derive_sql_rows(&t, &q).unwrap().evidence.rows, set(&[1, 2]));
        let q = parse_sql("SELECT * FROM w").unwrap();
        assert_eq!(derive_sql_rows(&t, &q).unwrap().evidence.rows, set(&[0, 1, 2]));
        let q = parse_sql("SELECT COUNT(*) FROM w").unwrap();
        assert_eq!(derive_sql_rows(&t, &q), Err(EvidenceError::NotSimple));
        let q = parse_sql("SELECT c1 FROM w WHERE c9 = 1").unwrap();
        assert!(matches!(derive_sql_rows(&t, &q), Err(EvidenceError::Sql(_))));
    }

    #[test]
    fn sql_rows_flag_mixed_kinds() {
        let t = table(&[&["a", "1"], &["b", "n/a"]]);
        let q = parse_sql("SELECT c1 FROM w WHERE c2 > 3").unwrap();
        let r = derive_sql_rows(&t, &q).unwrap();
        // text sorts after every number, as in the engine
        assert_eq!(r.evidence.rows, set(&[1]));
        assert_eq!(r.type_error_rows, vec![1]);
    }

    #[test]
    fn hybrid() {
        let cfg = GroundingConfig::default();
        let t = table(&[&["alice", "3"], &["bob", "5"], &["carol", "9"]]);
        let h = detect_hybrid(&t, "how many for bob", &g(&["9"]), &cfg, DEFAULT_HYBRID_THETA);
        assert_eq!(h.rows, set(&[1, 2]));
        let h = detect_hybrid(&t, "zzz", &g(&["nothing"]), &cfg, DEFAULT_HYBRID_THETA);
        assert_eq!(h.rows, set(&[0]));
        assert!(h.covered);
    }

    #[test]
    fn coverage_and_validation() {
        let sets = [
            EvidenceSet::new(EvidenceMode::Sql, set(&[1])),
            EvidenceSet::new(EvidenceMode::Sql, set(&[])),
            EvidenceSet::new(EvidenceMode::Sql, set(&[0, 2])),
            EvidenceSet::new(EvidenceMode::Sql, set(&[])),
        ];
        assert_eq!(evidence_coverage(&sets), Some(0.5));

        let gold: BTreeMap<String, EvidenceSet> = (0..3)
            .map(|i| (format!("e{i}"), EvidenceSet::new(EvidenceMode::Sql, set(&[i]))))
            .collect();
        let s = validate_detector(&gold, &gold).unwrap();
        assert_eq!((s.precision, s.recall), (Some(1.0), Some(1.0)));
        let pred: BTreeMap<String, EvidenceSet> = gold
            .iter()
            .map(|(k, v)| {
                let mut rows = v.rows.clone();
                rows.insert(10);
                (k.clone(), EvidenceSet::new(EvidenceMode::AnswerString, rows))
            })
            .collect();
        let s = validate_detector(&pred, &gold).unwrap();
        assert_eq!((s.precision, s.recall), (Some(0.5), Some(1.0)));
        let mut other = gold.clone();
        other.remove("e1");
        assert!(matches!(validate_detector(&other, &gold), Err(EvidenceError::IdMismatch(_))));
    }

    fn judgment(judge: &str, id: &str, row: usize, j: Judgment) -> AuditJudgment {
        AuditJudgment {
            id: id.into(),
            row,
            judgment: j,
            judge: judge.into(),
        }
    }

    #[test]
    fn audit_agreement_pairs_shared_items() {
        use Judgment::*;
        // Shared items: (e1,0) S/S, (e1,1) N/S, (e2,0) N/N, (e2,1) S/N.
        // p_o = 0.5, p_e = 0.5 * 0.5 + 0.5 * 0.5 = 0.5, kappa = 0.
        let js = vec![
            judgment("ann", "e1", 0, Supported),
            judgment("ann", "e1", 1, NotSupported),
            judgment("ann", "e2", 0, NotSupported),
            judgment("ann", "e2", 1, Supported),
            judgment("ann", "e3", 0, Uncertain),
            judgment("bo", "e1", 0, Supported),
            judgment("bo", "e1", 1, Supported),
            judgment("bo", "e2", 0, NotSupported),
            judgment("bo", "e2", 1, NotSupported),
            judgment("cy", "e3", 0, Uncertain),
        ];
        let out = audit_agreement(&js).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!((out[0].judge_a.as_str(), out[0].judge_b.as_str()), ("ann", "bo"));
        assert_eq!(out[0].n_shared, 4);
        assert_eq!(out[0].kappa, Some(0.0));
        // One shared item with a single class: chance agreement is 1.
        assert_eq!((out[1].n_shared, out[1].kappa), (1, None));
        assert_eq!((out[2].n_shared, out[2].kappa), (0, None));
    }

    #[test]
    fn duplicate_judgment_rejected() {
        let js = vec![
            judgment("ann", "e1", 0, Judgment::Supported),
            judgment("ann", "e1", 0, Judgment::Uncertain),
        ];
        assert!(matches!(audit_agreement(&js), Err(EvidenceError::DuplicateJudgment { .. })));
    }

    #[test]
    fn judgment_line_schema() {
        let line = r#"{"id":"q1","row":2,"judgment":"not_supported","judge":"ann"}"#;
        let j: AuditJudgment = serde_json::from_str(line).unwrap();
        assert_eq!(j.judgment, Judgment::NotSupported);
        assert_eq!(serde_json::to_string(&j).unwrap(), line);
    }

    proptest! {
        #[test]
        fn hybrid_contains_answer_rows(
            cells in proptest::collection::vec(proptest::collection::vec("[a-c0-9 ]{0,6}", 2), 1..6),
            q in "[a-c0-9 ]{0,12}",
            gold in "[a-c0-9]{1,3}",
        ) {
            let t = Table::new("t", vec!["x".into(), "y".into()], cells).unwrap();
            let cfg = GroundingConfig::default();
            let a = detect_answer_rows(&t, std::slice::from_ref(&gold), &cfg);
            let h = detect_hybrid(&t, &q, &[gold], &cfg, DEFAULT_HYBRID_THETA);
            prop_assert!(a.rows.is_subset(&h.rows));
            prop_assert!(h.covered);
        }

        #[test]
        fn self_validation_is_perfect(rows in proptest::collection::vec(proptest::collection::btree_set(0usize..20, 1..4), 1..6)) {
            let m: BTreeMap<String, EvidenceSet> = rows
                .into_iter()
                .enumerate()
                .map(|(i, r)| (i.to_string(), EvidenceSet::new(EvidenceMode::Sql, r)))
                .collect();
            let s = validate_detector(&m, &m).unwrap();
            prop_assert_eq!((s.precision, s.recall), (Some(1.0), Some(1.0)));
        }
    }
}
