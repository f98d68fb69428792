use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::run::{RecallRecord, ScoreLine, SqlRecord, VoteRecord};
use super::{file_tag, HarnessError, Report};
use crate::attribution::{attribution_distribution, replay, AttributionRecord};
use crate::evidence::EvidenceRecord;
use crate::jsonl;
use crate::retrieval::summarize_recall;
use crate::sql::{accounting, OracleOutcome};

const TOL: f64 = 1e-12;

/// One recomputation compared against the stored report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyCheck {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<VerifyCheck>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    fn push(&mut self, name: impl Into<String>, ok: bool, detail: impl Into<String>) {
        self.checks.push(VerifyCheck {
            name: name.into(),
            ok,
            detail: detail.into(),
        });
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL
}

fn load<T: DeserializeOwned>(dir: &Path, rel: &str) -> Result<Vec<T>, HarnessError> {
    Ok(jsonl::read(&dir.join(rel))?)
}

/// Recompute report aggregates from the per-example stage files in a run
/// directory and compare them with `report.json`.
pub fn verify(dir: &Path) -> Result<VerifyReport, HarnessError> {
    let report_path = dir.join("report.json");
    let text = fs::read_to_string(&report_path).map_err(|e| HarnessError::io(&report_path, e))?;
    let report: Report = serde_json::from_str(&text).map_err(|e| HarnessError::Schema {
        path: report_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut out = VerifyReport { checks: Vec::new() };

    for (model, block) in report.metrics.iter().flatten() {
        let lines: Vec<ScoreLine> = load(dir, &format!("stages/scores.{}.jsonl", file_tag(model)))?;
        let n = lines.len() as f64;
        let em = lines.iter().map(|l| l.em).sum::<f64>() / n;
        let f1 = lines.iter().map(|l| l.f1).sum::<f64>() / n;
        out.push(
            format!("metrics.{model}"),
            lines.len() == block.n && close(em, block.em) && close(f1, block.f1),
            format!("em {em} vs {}, f1 {f1} vs {}", block.em, block.f1),
        );
    }

    for (model, section) in report.attribution.iter().flatten() {
        let recs: Vec<AttributionRecord> = load(dir, &format!("stages/attribution.{}.jsonl", file_tag(model)))?;
        let dist = attribution_distribution(&recs, None);
        let same = dist.len() == section.distribution.len()
            && dist
                .iter()
                .all(|(k, v)| section.distribution.get(k).is_some_and(|w| close(*v, *w)));
        out.push(format!("attribution.{model}.distribution"), same, format!("{} records", recs.len()));
        let bad: Vec<&str> = recs
            .iter()
            .filter(|r| replay(&r.rule_trace).ok() != Some(r.label))
            .map(|r| r.id.as_str())
            .collect();
        out.push(
            format!("attribution.{model}.replay"),
            bad.is_empty(),
            if bad.is_empty() {
                "all traces replay".to_owned()
            } else {
                format!("traces disagree with labels: {}", bad.join(", "))
            },
        );
    }

    if let Some(ev) = &report.evidence {
        let recs: Vec<EvidenceRecord> = load(dir, "stages/evidence.jsonl")?;
        let covered = recs.iter().filter(|r| r.covered).count();
        let cov = (!recs.is_empty()).then(|| covered as f64 / recs.len() as f64);
        let ok = covered == ev.covered
            && recs.len() == ev.n
            && match (cov, ev.coverage) {
                (Some(a), Some(b)) => close(a, b),
                (None, None) => true,
                _ => false,
            };
        out.push("evidence.coverage", ok, format!("{covered}/{}", recs.len()));
    }

    if let Some(acc) = &report.accounting {
        let recs: Vec<SqlRecord> = load(dir, "stages/sql.jsonl")?;
        let outcomes: Vec<OracleOutcome> = recs
            .iter()
            .map(|r| OracleOutcome {
                status: r.result.status,
                verdict: r.verdict,
            })
            .collect();
        let again = accounting(&outcomes);
        out.push(
            "sql.accounting",
            again == acc.accounting,
            format!("{} queries", recs.len()),
        );
    }

    if let Some(recall) = report.retrieval.as_ref().and_then(|r| r.recall.as_ref()) {
        for (name, summary) in recall {
            let recs: Vec<RecallRecord> = load(dir, &format!("stages/recall.{name}.jsonl"))?;
            let hits: Vec<BTreeMap<usize, u8>> = recs.into_iter().map(|r| r.hits).collect();
            let ks: Vec<usize> = summary.recall.keys().copied().collect();
            let again = summarize_recall(name, summary.n_examples, &hits, &ks);
            out.push(format!("recall.{name}"), again == *summary, format!("{} ranked", hits.len()));
        }
    }

    if let Some(gov) = &report.governance {
        let votes: Vec<VoteRecord> = load(dir, "stages/lf_votes.jsonl")?;
        let covered = votes.iter().filter(|v| v.votes.values().any(Option::is_some)).count();
        let cov = if votes.is_empty() {
            0.0
        } else {
            covered as f64 / votes.len() as f64
        };
        out.push(
            "governance.coverage",
            votes.len() == gov.report.n_examples && close(cov, gov.report.coverage),
            format!("{covered}/{}", votes.len()),
        );
    }
    Ok(out)
}
