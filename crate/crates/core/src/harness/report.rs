use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{BundleCounts, RetrieverSpec, Stages};
use crate::attribution::{ErrorLabel, SweepReport};
use crate::evidence::{AuditAgreement, DetectorScore, EvidenceMode};
use crate::governance::GovernanceReport;
use crate::metrics::classifier::ClassifierMetrics;
use crate::metrics::MetricBlock;
use crate::probes::DeltaReport;
use crate::retrieval::{RecallSummary, StrataReport};
use crate::sql::verdict::ToleranceRate;
use crate::sql::AccountingReport;
use crate::table::TokenBudget;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactReport {
    pub n_train: usize,
    pub n_test: usize,
    pub slots: Vec<String>,
    /// Held-out metrics with every feature group.
    pub full: ClassifierMetrics,
    /// Held-out metrics with one feature group dropped.
    pub ablations: BTreeMap<String, ClassifierMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramSummary {
    pub n: usize,
    pub indexed_ngrams: usize,
    pub mean_overlap: Option<f64>,
    /// Examples with any overlapping n-gram.
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSection {
    pub generated: BTreeMap<String, usize>,
    pub not_applicable: BTreeMap<String, usize>,
    /// model -> probe -> delta over sources predicted both ways.
    pub deltas: BTreeMap<String, BTreeMap<String, DeltaReport>>,
    /// model -> ids whose prediction contains the canary.
    pub canary_hits: BTreeMap<String, Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ngram: Option<NgramSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSection {
    pub budget: TokenBudget,
    pub primary: String,
    pub requests: usize,
    pub oversize: usize,
    /// Present when the evidence stage ran.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub recall: Option<BTreeMap<String, RecallSummary>>,
    /// Share of evidence-covered examples with an evidence row in the
    /// primary pruned context.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub evidence_survival: Option<f64>,
    /// model -> hit-rank strata on the primary ranking.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub strata: Option<BTreeMap<String, StrataReport>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSection {
    pub mode: EvidenceMode,
    pub n: usize,
    pub covered: usize,
    pub coverage: Option<f64>,
    /// Examples whose gold SQL is simple, giving SQL-derived gold rows.
    pub sql_gold_examples: usize,
    pub type_error_rows: usize,
    /// Detector name -> row-level score against SQL-derived rows.
    pub detectors: BTreeMap<String, DetectorScore>,
    /// Pairwise judge agreement on ingested audit judgments.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub audit: Vec<AuditAgreement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlSection {
    pub accounting: AccountingReport,
    pub simple_sql: usize,
    pub simple_coverage: Option<f64>,
    pub tolerance: Vec<ToleranceRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSection {
    pub n: usize,
    pub oracle_sources: BTreeMap<String, usize>,
    pub distribution: BTreeMap<ErrorLabel, f64>,
    pub sweep: SweepReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSummary {
    pub n: usize,
    pub triggered: usize,
    /// model -> flip rate over triggered examples predicted both ways.
    pub flip_rate: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernanceSection {
    pub catalog_hash: String,
    pub report: GovernanceReport,
    pub contrast: BTreeMap<String, ContrastSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSummary {
    pub n_examples: usize,
    pub failed_examples: usize,
    pub rate: f64,
    pub threshold: f64,
    pub exceeded: bool,
    pub by_stage: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run_id: String,
    pub tool_version: String,
    pub manifest_digest: String,
    pub counts: BundleCounts,
    pub stages: Stages,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<BTreeMap<String, MetricBlock>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub verdict_accuracy: Option<BTreeMap<String, f64>>,
    /// Score file tag -> metrics; null when the labels hold one class.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub classifier: Option<BTreeMap<String, Option<ClassifierMetrics>>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub artifact: Option<ArtifactReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub probes: Option<ProbeSection>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub retrieval: Option<RetrievalSection>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub evidence: Option<EvidenceSection>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accounting: Option<SqlSection>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub attribution: Option<BTreeMap<String, AttributionSection>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub governance: Option<GovernanceSection>,
    /// Report section -> stage files its numbers come from.
    pub provenance: BTreeMap<String, Vec<String>>,
    pub failures: FailureSummary,
}

fn f3(x: f64) -> String {
    format!("{x:.3}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_owned(), f3)
}

pub fn render_markdown(r: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Run {}\n", r.run_id);
    let _ = writeln!(s, "- tool: {}", r.tool_version);
    let _ = writeln!(s, "- manifest: `{}`", r.manifest_digest);
    let c = &r.counts;
    let _ = writeln!(
        s,
        "- tables {}, qa {}, verdict {}, gold sql {}\n",
        c.tables, c.qa_examples, c.verdict_examples, c.gold_sql
    );
    if let Some(m) = &r.metrics {
        let _ = writeln!(s, "## QA metrics\n\n| model | n | EM | F1 |\n|---|---|---|---|");
        for (model, b) in m {
            let _ = writeln!(
                s,
                "| {model} | {} | {} ({}-{}) | {} ({}-{}) |",
                b.n,
                f3(b.em),
                f3(b.ci_em[0]),
                f3(b.ci_em[1]),
                f3(b.f1),
                f3(b.ci_f1[0]),
                f3(b.ci_f1[1])
            );
        }
        s.push('\n');
    }
    if let Some(v) = r.verdict_accuracy.as_ref().filter(|v| !v.is_empty()) {
        let _ = writeln!(s, "## Verdict accuracy\n\n| model | accuracy |\n|---|---|");
        for (model, a) in v {
            let _ = writeln!(s, "| {model} | {} |", f3(*a));
        }
        s.push('\n');
    }
    if let Some(a) = &r.artifact {
        let _ = writeln!(
            s,
            "## Artifact detector\n\ntrain {}, test {}\n\n| features | Acc | AUROC | AUPRC | Pos |\n|---|---|---|---|---|",
            a.n_train, a.n_test
        );
        let row = |s: &mut String, name: &str, m: &ClassifierMetrics| {
            let _ = writeln!(
                s,
                "| {name} | {} | {} | {} | {} |",
                f3(m.accuracy),
                f3(m.auroc),
                f3(m.auprc),
                f3(m.pos_rate)
            );
        };
        row(&mut s, "all", &a.full);
        for (name, m) in &a.ablations {
            row(&mut s, name, m);
        }
        s.push('\n');
    }
    if let Some(p) = &r.probes {
        let _ = writeln!(s, "## Contamination probes\n\n| probe | generated | not applicable |\n|---|---|---|");
        for (k, n) in &p.generated {
            let _ = writeln!(s, "| {k} | {n} | {} |", p.not_applicable.get(k).copied().unwrap_or(0));
        }
        for (model, deltas) in &p.deltas {
            let _ = writeln!(s, "\n{model}:\n\n| probe | n | dEM | dF1 |\n|---|---|---|---|");
            for (probe, d) in deltas {
                let _ = writeln!(s, "| {probe} | {} | {} | {} |", d.n, f3(d.delta["em"]), f3(d.delta["f1"]));
            }
        }
        for (model, hits) in &p.canary_hits {
            let _ = writeln!(s, "\ncanary hits for {model}: {}", hits.len());
        }
        if let Some(g) = &p.ngram {
            let _ = writeln!(
                s,
                "\n{}-gram overlap: mean {}, flagged {}",
                g.n,
                opt(g.mean_overlap),
                g.flagged
            );
        }
        s.push('\n');
    }
    if let Some(rt) = &r.retrieval {
        let _ = writeln!(
            s,
            "## Retrieval\n\nbudget {} tokens, {} columns, primary {}; {} requests, {} oversize",
            rt.budget.max_table_tokens, rt.budget.max_cols, rt.primary, rt.requests, rt.oversize
        );
        if let Some(recall) = &rt.recall {
            let ks: Vec<usize> = recall
                .values()
                .next()
                .map(|r| r.recall.keys().copied().collect())
                .unwrap_or_default();
            let head: Vec<String> = ks.iter().map(|k| format!("R@{k}")).collect();
            let _ = writeln!(s, "\n| retriever | coverage | {} |", head.join(" | "));
            let _ = writeln!(s, "|---|---|{}", "---|".repeat(ks.len()));
            for (name, sum) in recall {
                let vals: Vec<String> = ks.iter().map(|k| opt(sum.recall[k])).collect();
                let _ = writeln!(s, "| {name} | {} | {} |", opt(sum.coverage), vals.join(" | "));
            }
        }
        if let Some(v) = rt.evidence_survival {
            let _ = writeln!(s, "\nevidence survival after pruning: {}", f3(v));
        }
        s.push('\n');
    }
    if let Some(e) = &r.evidence {
        let _ = writeln!(
            s,
            "## Evidence\n\nmode {}, coverage {} ({} of {})",
            e.mode.name(),
            opt(e.coverage),
            e.covered,
            e.n
        );
        for (name, d) in &e.detectors {
            let _ = writeln!(
                s,
                "- {name} vs SQL rows: precision {}, recall {}",
                opt(d.precision),
                opt(d.recall)
            );
        }
        for a in &e.audit {
            let _ = writeln!(
                s,
                "- audit {} vs {}: kappa {} over {} shared rows",
                a.judge_a,
                a.judge_b,
                opt(a.kappa),
                a.n_shared
            );
        }
        s.push('\n');
    }
    if let Some(q) = &r.accounting {
        let a = &q.accounting;
        let _ = writeln!(
            s,
            "## SQL oracle\n\n| total | execution rate | exact | soft | mismatch soft-resolved |\n|---|---|---|---|---|"
        );
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            a.total,
            opt(a.execution_rate),
            opt(a.exact_rate),
            opt(a.soft_match_rate),
            opt(a.soft_resolved_rate)
        );
        let _ = writeln!(s, "\nsimple SQL coverage {}", opt(q.simple_coverage));
        for t in &q.tolerance {
            let _ = writeln!(s, "- tolerance {}: resolved {}", t.name, opt(t.rate));
        }
        s.push('\n');
    }
    if let Some(att) = &r.attribution {
        let labels: Vec<&str> = ErrorLabel::ALL.iter().map(|l| l.name()).collect();
        let _ = writeln!(s, "## Error attribution\n\n| model | n | {} |", labels.join(" | "));
        let _ = writeln!(s, "|---|---|{}", "---|".repeat(labels.len()));
        for (model, a) in att {
            let vals: Vec<String> = ErrorLabel::ALL.iter().map(|l| f3(a.distribution[l])).collect();
            let _ = writeln!(s, "| {model} | {} | {} |", a.n, vals.join(" | "));
        }
        s.push('\n');
    }
    if let Some(g) = &r.governance {
        let gr = &g.report;
        let _ = writeln!(
            s,
            "## LF governance\n\n| LFs | coverage | conflict | abstention | accuracy |\n|---|---|---|---|---|\n| {} | {} | {} | {} | {} |",
            gr.n_lfs,
            f3(gr.coverage),
            opt(gr.conflict_rate),
            f3(gr.abstention_rate),
            opt(gr.lf_accuracy)
        );
        if gr.diagnostic_only {
            let _ = writeln!(s, "\ncoverage below 0.25: diagnostic only");
        }
        for (kind, c) in &g.contrast {
            let _ = writeln!(s, "- {kind}: {} of {} triggered", c.triggered, c.n);
            for (model, f) in &c.flip_rate {
                let _ = writeln!(s, "  - {model} flip rate {}", opt(*f));
            }
        }
        s.push('\n');
    }
    let f = &r.failures;
    let _ = writeln!(
        s,
        "## Failures\n\n{} of {} examples failed ({}){}",
        f.failed_examples,
        f.n_examples,
        f3(f.rate),
        if f.exceeded { ", above the fail-soft threshold" } else { "" }
    );
    s
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// Plot data, one CSV per figure family, keyed by file name.
pub fn emit_plots(r: &Report) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    if let Some(m) = &r.metrics {
        let mut rows = Vec::new();
        for (model, b) in m {
            rows.push(vec![model.clone(), "em".into(), num(b.em), num(b.ci_em[0]), num(b.ci_em[1])]);
            rows.push(vec![model.clone(), "f1".into(), num(b.f1), num(b.ci_f1[0]), num(b.ci_f1[1])]);
        }
        out.insert(
            "qa_bars.csv".into(),
            csv_string(&["model", "metric", "value", "ci_lo", "ci_hi"], rows),
        );
    }
    if let Some(att) = &r.attribution {
        let rows = att
            .iter()
            .flat_map(|(model, a)| {
                ErrorLabel::ALL
                    .iter()
                    .map(move |l| vec![model.clone(), l.name().to_owned(), num(a.distribution[l])])
            })
            .collect();
        out.insert("attribution.csv".into(), csv_string(&["model", "label", "share"], rows));
    }
    if let Some(p) = &r.probes {
        let mut rows = Vec::new();
        for (model, deltas) in &p.deltas {
            for (probe, d) in deltas {
                for metric in ["em", "f1"] {
                    rows.push(vec![
                        model.clone(),
                        probe.clone(),
                        metric.to_owned(),
                        num(d.before.get(metric).expect("known metric")),
                        num(d.after.get(metric).expect("known metric")),
                        num(d.delta[metric]),
                    ]);
                }
            }
        }
        out.insert(
            "contamination.csv".into(),
            csv_string(&["model", "probe", "metric", "before", "after", "delta"], rows),
        );
    }
    if let (Some(m), Some(recall)) = (&r.metrics, r.retrieval.as_ref().and_then(|rt| rt.recall.as_ref())) {
        let primary = r.retrieval.as_ref().map(|rt| rt.primary.clone()).unwrap_or_default();
        let mut rows = Vec::new();
        for (model, b) in m {
            let retriever = model
                .rsplit_once('@')
                .map(|(_, r)| r.to_owned())
                .filter(|r| r.parse::<RetrieverSpec>().is_ok())
                .unwrap_or_else(|| primary.clone());
            if let Some(r10) = recall.get(&retriever).and_then(|s| s.recall.get(&10).copied().flatten()) {
                rows.push(vec![retriever, num(r10), num(b.em)]);
            }
        }
        out.insert("recall_em.csv".into(), csv_string(&["retriever", "recall@10", "em"], rows));
    }
    out
}
