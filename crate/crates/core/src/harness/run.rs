use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::*;
use super::{file_tag, split_derived_id, DatasetBundle, HarnessError, RetrieverSpec, RunManifest};
use crate::attribution::{
    attribute, attribution_distribution, sensitivity_sweep, standard_sweep_configs, AttributionCase,
    AttributionRecord, OracleSource, RetrievalInfo,
};
use crate::evidence::{
    audit_agreement, derive_sql_rows, detect_answer_rows, detect_hybrid, evidence_coverage, validate_detector, EvidenceMode,
    EvidenceRecord, EvidenceSet,
};
use crate::example::{Example, Task, VerdictLabel};
use crate::governance::{apply_lfs, contrast_set, flip_rate, governance_report, load_catalog, ContrastKind, Labeler};
use crate::jsonl;
use crate::metrics::classifier::{classifier_metrics, predict, train_linear, TrainConfig};
use crate::metrics::features::{extract_features, FeatureMask};
use crate::metrics::{score, ExampleScore, MetricBlock};
use crate::probes::{
    apply_probe, default_templates, detect_canary, ngram_overlap, probe_delta, NgramIndex, PerturbedExample,
    ProbeError, ProbeKind,
};
use crate::retrieval::{
    budget_prune, first_hit_rank, fuse_hybrid, hit_rank_stratify, rank, rank_dense, rank_sql_gold, recall_at_k,
    summarize_recall, HitRecord, PrunedContext, Ranking, SparseKind,
};
use crate::rng::{derive_seed, sha256_hex};
use crate::sql::engine::{open_database, target_table};
use crate::sql::verdict::ToleranceSetting;
use crate::sql::{
    accounting, build_database, classify_simple, compare_denotation, execute_gold, parse_sql, tolerance_ablation,
    ExecStatus, OracleOutcome, OracleResult, QueryKind, SqlQuery,
};
use crate::table::{GroundingConfig, Table};

/// Share of failed examples above which a run is reported as failed.
pub const FAIL_SOFT_THRESHOLD: f64 = 0.05;

/// A per-example problem recorded instead of aborting the run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub id: String,
    pub message: String,
}

impl Failure {
    fn new(stage: &str, id: &str, message: impl Into<String>) -> Self {
        Failure {
            stage: stage.to_owned(),
            id: id.to_owned(),
            message: message.into(),
        }
    }
}

/// Inference-requests JSONL line: everything a model needs for one answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRequest {
    pub id: String,
    pub task: Task,
    pub question: String,
    pub context: String,
    pub retriever: String,
    pub budget: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub oversize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RankingRecord {
    id: String,
    order: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct RecallRecord {
    pub id: String,
    pub hit_rank: Option<usize>,
    pub hits: BTreeMap<usize, u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct ScoreLine {
    pub id: String,
    pub em: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct SqlRecord {
    pub id: String,
    pub simple: bool,
    #[serde(flatten)]
    pub result: OracleResult,
    pub verdict: Option<crate::sql::MatchVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SqlRowsRecord {
    id: String,
    rows: Vec<usize>,
    type_error_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct VoteRecord {
    pub id: String,
    pub gold: Option<VerdictLabel>,
    pub votes: BTreeMap<String, Option<VerdictLabel>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ContrastRecord {
    id: String,
    source_id: String,
    question: String,
    table_id: String,
    triggered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NgramRecord {
    id: String,
    overlap: f64,
}

pub struct RunOutput {
    pub manifest: RunManifest,
    pub report: Report,
    /// Output files keyed by path relative to the output directory.
    pub files: BTreeMap<String, String>,
    pub failures: Vec<Failure>,
}

impl RunOutput {
    pub fn report_json(&self) -> &str {
        &self.files["report.json"]
    }

    pub fn report_digest(&self) -> String {
        sha256_hex(self.report_json().as_bytes())
    }

    pub fn exceeded(&self) -> bool {
        self.report.failures.exceeded
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        for (rel, body) in &self.files {
            let p = dir.join(rel);
            if let Some(parent) = p.parent() {
                fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
            }
            fs::write(&p, body).map_err(|e| HarnessError::io(&p, e))?;
        }
        Ok(())
    }
}

/// Pool size from `GLEAN_WORKERS`, if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var("GLEAN_WORKERS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}

pub fn run(manifest: &RunManifest, bundle: &DatasetBundle, lf_catalog: &str) -> Result<RunOutput, HarnessError> {
    run_with_workers(manifest, bundle, lf_catalog, workers_from_env())
}

/// Execute the enabled stages on a pool of `workers` threads (rayon's
/// default when `None`). Outputs do not depend on the pool size.
pub fn run_with_workers(
    manifest: &RunManifest,
    bundle: &DatasetBundle,
    lf_catalog: &str,
    workers: Option<usize>,
) -> Result<RunOutput, HarnessError> {
    manifest.validate()?;
    bundle.check_integrity()?;
    if sha256_hex(lf_catalog.as_bytes()) != manifest.lf_catalog_hash {
        return Err(HarnessError::Config("LF catalog does not match lf_catalog_hash".into()));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| HarnessError::Config(e.to_string()))?;
    pool.install(|| Runner::new(manifest, bundle, lf_catalog).execute())
}

/// The ids a model predicted for a task among `examples`.
fn covers(preds: &BTreeMap<String, String>, examples: &[&Example]) -> bool {
    examples.iter().any(|e| preds.contains_key(&e.id))
}

fn write_lines<T: Serialize>(files: &mut BTreeMap<String, String>, name: &str, items: &[T]) -> String {
    let rel = format!("stages/{name}");
    files.insert(rel.clone(), jsonl::to_string(items));
    rel
}

struct Runner<'a> {
    m: &'a RunManifest,
    b: &'a DatasetBundle,
    catalog: &'a str,
    qa: Vec<&'a Example>,
    verdicts: Vec<&'a Example>,
    failures: Vec<Failure>,
    files: BTreeMap<String, String>,
    provenance: BTreeMap<String, Vec<String>>,
}

/// Retrieval outputs for one example.
struct Retrieved {
    rankings: BTreeMap<RetrieverSpec, Ranking>,
    pruned: Option<PrunedContext>,
}

impl<'a> Runner<'a> {
    fn new(m: &'a RunManifest, b: &'a DatasetBundle, catalog: &'a str) -> Self {
        Runner {
            m,
            b,
            catalog,
            qa: b.examples_of(Task::Qa).collect(),
            verdicts: b.examples_of(Task::Verdict).collect(),
            failures: Vec::new(),
            files: BTreeMap::new(),
            provenance: BTreeMap::new(),
        }
    }

    fn cfg(&self) -> &GroundingConfig {
        &self.m.grounding
    }

    fn seed(&self, key: &str) -> u64 {
        derive_seed(self.m.global_seed, key)
    }

    fn execute(mut self) -> Result<RunOutput, HarnessError> {
        let st = self.m.stages;
        let perturbed = if st.probes { self.probe_examples() } else { Vec::new() };
        let sql_rows = self.sql_rows();
        let retrieved = if st.retrieval {
            Some(self.retrieval(&sql_rows))
        } else {
            None
        };
        let evidence = if st.evidence { Some(self.evidence()) } else { None };
        let sql = if st.sql { Some(self.sql_stage()) } else { None };
        let scores = if st.metrics { Some(self.scores()) } else { None };

        let mut report_probes = None;
        if st.probes {
            report_probes = Some(self.probe_section(&perturbed, retrieved.is_some()));
        }
        let mut report_retrieval = None;
        if let Some(ret) = &retrieved {
            report_retrieval = Some(self.retrieval_section(ret, evidence.as_ref(), scores.as_ref(), &sql_rows));
        }
        let report_evidence = evidence.as_ref().map(|ev| self.evidence_section(ev, &sql_rows));
        let report_sql = sql.as_ref().map(|s| self.sql_section(s));
        let (mut metrics, mut verdict_acc, mut classifier, mut artifact) = (None, None, None, None);
        if let Some(sc) = &scores {
            metrics = Some(self.metric_blocks(sc));
            verdict_acc = Some(self.verdict_accuracy());
            classifier = Some(self.classifier_scores());
            artifact = artifact_detector(&self.verdicts, self.b, self.m.global_seed);
        }
        let attribution = if st.attribution {
            Some(self.attribution(sql.as_ref(), evidence.as_ref(), retrieved.as_ref())?)
        } else {
            None
        };
        let governance = if st.governance { Some(self.governance()?) } else { None };

        let failures = self.failure_summary();
        let mut out_manifest = self.m.clone();
        out_manifest.input_digests = self.b.digests.clone();
        let report = Report {
            run_id: self.m.run_id.clone(),
            tool_version: self.m.tool_version.clone(),
            manifest_digest: out_manifest.digest(),
            counts: self.b.counts(),
            stages: st,
            metrics,
            verdict_accuracy: verdict_acc,
            classifier,
            artifact,
            probes: report_probes,
            retrieval: report_retrieval,
            evidence: report_evidence,
            accounting: report_sql,
            attribution,
            governance,
            provenance: self.provenance.clone(),
            failures,
        };
        self.failures.sort();
        let mut files = std::mem::take(&mut self.files);
        files.insert("errors.jsonl".into(), jsonl::to_string(&self.failures));
        files.insert(
            "manifest.json".into(),
            serde_json::to_string_pretty(&out_manifest).expect("serializable manifest") + "\n",
        );
        files.insert(
            "report.json".into(),
            serde_json::to_string_pretty(&report).expect("serializable report") + "\n",
        );
        files.insert("report.md".into(), render_markdown(&report));
        for (name, body) in emit_plots(&report) {
            files.insert(format!("plots/{name}"), body);
        }
        Ok(RunOutput {
            manifest: out_manifest,
            report,
            files,
            failures: self.failures,
        })
    }

    fn fail(&mut self, f: Failure) {
        self.failures.push(f);
    }

    fn failure_summary(&self) -> FailureSummary {
        let n = self.b.examples.len();
        let ids: BTreeSet<&str> = self
            .failures
            .iter()
            .map(|f| split_derived_id(&f.id).map_or(f.id.as_str(), |(src, _)| src))
            .collect();
        let mut by_stage = BTreeMap::new();
        for f in &self.failures {
            *by_stage.entry(f.stage.clone()).or_insert(0) += 1;
        }
        let rate = if n == 0 { 0.0 } else { ids.len() as f64 / n as f64 };
        FailureSummary {
            n_examples: n,
            failed_examples: ids.len(),
            rate,
            threshold: FAIL_SOFT_THRESHOLD,
            exceeded: rate > FAIL_SOFT_THRESHOLD,
            by_stage,
        }
    }

    fn add_provenance(&mut self, section: &str, file: String) {
        self.provenance.entry(section.to_owned()).or_default().push(file);
    }

    // ---- probes

    fn probe_examples(&mut self) -> Vec<PerturbedExample> {
        let templates = default_templates();
        let kinds: Vec<ProbeKind> = self
            .m
            .probe_kinds
            .iter()
            .copied()
            .filter(|k| *k != ProbeKind::NgramOverlap)
            .collect();
        let all: Vec<&Example> = self.b.examples.values().collect();
        let results: Vec<Vec<(ProbeKind, Result<PerturbedExample, ProbeError>)>> = all
            .par_iter()
            .map(|ex| {
                let t = self.b.table_of(ex);
                kinds
                    .iter()
                    .map(|&k| (k, apply_probe(k, ex, t, self.m.global_seed, &templates, &self.m.canary)))
                    .collect()
            })
            .collect();
        let mut out = Vec::new();
        for (ex, res) in all.iter().zip(results) {
            for (k, r) in res {
                match r {
                    Ok(p) => out.push(p),
                    Err(ProbeError::NoSwapPossible | ProbeError::NoTemplateMatch) => {}
                    Err(e) => self.fail(Failure::new("probes", &ex.id, format!("{k}: {e}"))),
                }
            }
        }
        out
    }

    fn probe_section(&mut self, perturbed: &[PerturbedExample], with_requests: bool) -> ProbeSection {
        let mut generated = BTreeMap::new();
        let mut not_applicable = BTreeMap::new();
        let n_all = self.b.examples.len();
        for k in &self.m.probe_kinds {
            if *k == ProbeKind::NgramOverlap {
                continue;
            }
            let g = perturbed.iter().filter(|p| p.probe == *k).count();
            let failed = self
                .failures
                .iter()
                .filter(|f| f.stage == "probes" && f.message.starts_with(&format!("{k}:")))
                .count();
            generated.insert(k.name().to_owned(), g);
            not_applicable.insert(k.name().to_owned(), n_all - g - failed);
        }
        let records: Vec<_> = perturbed.iter().map(PerturbedExample::record).collect();
        let f = write_lines(&mut self.files, "probes.jsonl", &records);
        self.add_provenance("probes", f);
        let tables: Vec<&Table> = perturbed.iter().filter_map(|p| p.table.as_ref()).collect();
        let f = write_lines(&mut self.files, "probe_tables.jsonl", &tables);
        self.add_provenance("probes", f);
        if with_requests {
            let targets: Vec<(&Example, &Table)> = perturbed
                .iter()
                .map(|p| {
                    let t = p.table.as_ref().unwrap_or_else(|| &self.b.tables[&p.example.table_id]);
                    (&p.example, t)
                })
                .collect();
            let reqs = self.build_requests(&targets, &BTreeMap::new());
            let f = write_lines(&mut self.files, "requests.probes.jsonl", &reqs);
            self.add_provenance("probes", f);
        }

        let resamples = self.m.bootstrap_resamples;
        let mut deltas = BTreeMap::new();
        let mut canary_hits = BTreeMap::new();
        for (model, preds) in &self.b.predictions {
            let mut per_probe = BTreeMap::new();
            for k in &self.m.probe_kinds {
                let pairs: Vec<&PerturbedExample> = perturbed
                    .iter()
                    .filter(|p| p.probe == *k && p.example.task == Task::Qa)
                    .filter(|p| preds.contains_key(&p.source_id) && preds.contains_key(&p.example.id))
                    .collect();
                if pairs.is_empty() {
                    continue;
                }
                let mut before = BTreeMap::new();
                let mut after = BTreeMap::new();
                for p in &pairs {
                    let src = &self.b.examples[&p.source_id];
                    before.insert(p.source_id.clone(), score(&preds[&p.source_id], &src.gold_answers));
                    after.insert(p.source_id.clone(), score(&preds[&p.example.id], &p.example.gold_answers));
                }
                let block = |m: &BTreeMap<String, ExampleScore>, key: &str| {
                    let em: Vec<f64> = m.values().map(|s| s.em).collect();
                    let f1: Vec<f64> = m.values().map(|s| s.f1).collect();
                    MetricBlock::compute(&em, &f1, resamples, derive_seed(self.m.global_seed, key))
                        .expect("nonempty pairs")
                };
                let b = block(&before, &format!("bootstrap:{model}:{k}:before"));
                let a = block(&after, &format!("bootstrap:{model}:{k}:after"));
                let ids: BTreeSet<String> = before.keys().cloned().collect();
                let d = probe_delta(&ids, &b, &ids, &a).expect("aligned by construction");
                per_probe.insert(k.name().to_owned(), d);
            }
            if !per_probe.is_empty() {
                deltas.insert(model.clone(), per_probe);
            }
            if self.m.probe_kinds.contains(&ProbeKind::Canary) {
                let hits = detect_canary(preds.iter().map(|(id, p)| (id.as_str(), p.as_str())), &self.m.canary);
                canary_hits.insert(model.clone(), hits);
            }
        }

        let mut ngram = None;
        if self.m.probe_kinds.contains(&ProbeKind::NgramOverlap) && !self.b.corpus.is_empty() {
            let mut index = NgramIndex::new(self.m.ngram_n);
            for doc in &self.b.corpus {
                index.add(&doc.text);
            }
            let recs: Vec<NgramRecord> = self
                .b
                .examples
                .values()
                .map(|ex| NgramRecord {
                    id: ex.id.clone(),
                    overlap: ngram_overlap(&ex.question, &index),
                })
                .collect();
            let vals: Vec<f64> = recs.iter().map(|r| r.overlap).collect();
            ngram = Some(NgramSummary {
                n: self.m.ngram_n,
                indexed_ngrams: index.len(),
                mean_overlap: crate::metrics::mean(&vals),
                flagged: vals.iter().filter(|v| **v > 0.0).count(),
            });
            let f = write_lines(&mut self.files, "ngram.jsonl", &recs);
            self.add_provenance("probes", f);
        }
        ProbeSection {
            generated,
            not_applicable,
            deltas,
            canary_hits,
            ngram,
        }
    }

    // ---- retrieval

    /// SQL-derived gold rows for examples whose gold SQL is simple.
    fn sql_rows(&self) -> BTreeMap<String, crate::evidence::SqlRows> {
        let out: Vec<Option<(String, crate::evidence::SqlRows)>> = self
            .qa
            .par_iter()
            .map(|ex| {
                let q = parse_sql(ex.gold_sql.as_deref()?).ok()?;
                let rows = derive_sql_rows(self.b.table_of(ex), &q).ok()?;
                Some((ex.id.clone(), rows))
            })
            .collect();
        out.into_iter().flatten().collect()
    }

    fn rank_one(
        &self,
        spec: RetrieverSpec,
        ex: &Example,
        t: &Table,
        sql_rows: &BTreeMap<String, crate::evidence::SqlRows>,
    ) -> Result<Option<Ranking>, String> {
        let dense = || -> Result<Ranking, String> {
            let emb = self
                .b
                .embeddings
                .get(&ex.id)
                .ok_or_else(|| format!("no embeddings for {}", ex.id))?;
            emb.validate(Some(t.n_rows())).map_err(|e| e.to_string())?;
            rank_dense(emb).map_err(|e| e.to_string())
        };
        match spec {
            RetrieverSpec::Sparse(k) => Ok(Some(rank(&ex.question, t, k))),
            RetrieverSpec::Dense => dense().map(Some),
            RetrieverSpec::Hybrid => {
                let sparse = rank(&ex.question, t, SparseKind::Bm25);
                let d = dense()?;
                fuse_hybrid(&sparse, &d, self.m.rrf_k).map(Some).map_err(|e| e.to_string())
            }
            RetrieverSpec::SqlGold => Ok(sql_rows.get(&ex.id).map(|r| rank_sql_gold(&r.evidence, t.n_rows()))),
            RetrieverSpec::External => {
                let s = self
                    .b
                    .row_scores
                    .get(&ex.id)
                    .ok_or_else(|| format!("no row scores for {}", ex.id))?;
                if s.len() != t.n_rows() {
                    return Err(format!("{} row scores for {} rows", s.len(), t.n_rows()));
                }
                Ok(Some(Ranking::from_scores("external", s)))
            }
        }
    }

    fn build_requests(
        &mut self,
        targets: &[(&Example, &Table)],
        sql_rows: &BTreeMap<String, crate::evidence::SqlRows>,
    ) -> Vec<InferenceRequest> {
        let primary = self.m.primary().expect("validated");
        let results: Vec<Result<Option<InferenceRequest>, String>> = targets
            .par_iter()
            .map(|(ex, t)| {
                let Some(r) = self.rank_one(primary, ex, t, sql_rows)? else {
                    return Ok(None);
                };
                let p = budget_prune(t, &r, &ex.question, &self.m.budget, None);
                Ok(Some(InferenceRequest {
                    id: ex.id.clone(),
                    task: ex.task,
                    question: ex.question.clone(),
                    context: p.context,
                    retriever: primary.name().to_owned(),
                    budget: self.m.budget.max_table_tokens,
                    rows: p.rows,
                    cols: p.cols,
                    oversize: p.oversize,
                }))
            })
            .collect();
        let mut out = Vec::new();
        for ((ex, _), r) in targets.iter().zip(results) {
            match r {
                Ok(Some(req)) => out.push(req),
                Ok(None) => {}
                Err(e) => self.fail(Failure::new("retrieval", &ex.id, e)),
            }
        }
        out
    }

    fn retrieval(&mut self, sql_rows: &BTreeMap<String, crate::evidence::SqlRows>) -> BTreeMap<String, Retrieved> {
        let specs = self.m.retriever_specs().expect("validated");
        let primary = self.m.primary().expect("validated");
        type PerSpec = Vec<(RetrieverSpec, Result<Option<Ranking>, String>)>;
        let results: Vec<PerSpec> = self
            .qa
            .par_iter()
            .map(|ex| {
                let t = self.b.table_of(ex);
                specs
                    .iter()
                    .map(|&s| (s, self.rank_one(s, ex, t, sql_rows)))
                    .collect()
            })
            .collect();
        let mut out = BTreeMap::new();
        for (ex, res) in self.qa.clone().into_iter().zip(results) {
            let mut rankings = BTreeMap::new();
            for (s, r) in res {
                match r {
                    Ok(Some(r)) => {
                        rankings.insert(s, r);
                    }
                    Ok(None) => {}
                    Err(e) => self.fail(Failure::new("retrieval", &ex.id, format!("{s}: {e}"))),
                }
            }
            let t = self.b.table_of(ex);
            let pruned = rankings
                .get(&primary)
                .map(|r| budget_prune(t, r, &ex.question, &self.m.budget, None));
            out.insert(ex.id.clone(), Retrieved { rankings, pruned });
        }
        for s in &specs {
            let recs: Vec<RankingRecord> = out
                .iter()
                .filter_map(|(id, r)| {
                    r.rankings.get(s).map(|rk| RankingRecord {
                        id: id.clone(),
                        order: rk.order.clone(),
                    })
                })
                .collect();
            let f = write_lines(&mut self.files, &format!("rankings.{s}.jsonl"), &recs);
            self.add_provenance("retrieval", f);
        }
        let mut reqs: Vec<InferenceRequest> = out
            .iter()
            .filter_map(|(id, r)| {
                let ex = &self.b.examples[id];
                r.pruned.as_ref().map(|p| InferenceRequest {
                    id: id.clone(),
                    task: ex.task,
                    question: ex.question.clone(),
                    context: p.context.clone(),
                    retriever: primary.name().to_owned(),
                    budget: self.m.budget.max_table_tokens,
                    rows: p.rows.clone(),
                    cols: p.cols.clone(),
                    oversize: p.oversize,
                })
            })
            .collect();
        let verdict_targets: Vec<(&Example, &Table)> =
            self.verdicts.iter().map(|e| (*e, self.b.table_of(e))).collect();
        reqs.extend(self.build_requests(&verdict_targets, sql_rows));
        reqs.sort_by(|a, b| a.id.cmp(&b.id));
        let f = write_lines(&mut self.files, "requests.jsonl", &reqs);
        self.add_provenance("retrieval", f);
        out
    }

    fn retrieval_section(
        &mut self,
        ret: &BTreeMap<String, Retrieved>,
        evidence: Option<&BTreeMap<String, EvidenceSet>>,
        scores: Option<&BTreeMap<String, BTreeMap<String, ExampleScore>>>,
        _sql_rows: &BTreeMap<String, crate::evidence::SqlRows>,
    ) -> RetrievalSection {
        let primary = self.m.primary().expect("validated");
        let requests = self
            .files
            .get("stages/requests.jsonl")
            .map_or(0, |s| s.lines().count());
        let oversize = ret.values().filter(|r| r.pruned.as_ref().is_some_and(|p| p.oversize)).count();
        let (mut recall, mut survival, mut strata) = (None, None, None);
        if let Some(ev) = evidence {
            let specs = self.m.retriever_specs().expect("validated");
            let mut table = BTreeMap::new();
            for s in specs {
                let mut recs = Vec::new();
                for (id, r) in ret {
                    let (Some(rk), Some(e)) = (r.rankings.get(&s), ev.get(id)) else {
                        continue;
                    };
                    if let Ok(hits) = recall_at_k(rk, e, &self.m.ks) {
                        recs.push(RecallRecord {
                            id: id.clone(),
                            hit_rank: first_hit_rank(rk, e),
                            hits,
                        });
                    }
                }
                let hits: Vec<BTreeMap<usize, u8>> = recs.iter().map(|r| r.hits.clone()).collect();
                table.insert(s.name().to_owned(), summarize_recall(s.name(), self.qa.len(), &hits, &self.m.ks));
                let f = write_lines(&mut self.files, &format!("recall.{s}.jsonl"), &recs);
                self.add_provenance("retrieval", f);
            }
            recall = Some(table);
            let covered: Vec<(&String, &EvidenceSet)> = ev.iter().filter(|(_, e)| e.covered).collect();
            let kept = covered
                .iter()
                .filter(|(id, e)| {
                    ret.get(*id)
                        .and_then(|r| r.pruned.as_ref())
                        .is_some_and(|p| !p.survived().is_disjoint(&e.rows))
                })
                .count();
            survival = (!covered.is_empty()).then(|| kept as f64 / covered.len() as f64);
            if let Some(sc) = scores {
                let mut by_model = BTreeMap::new();
                for (model, per) in sc {
                    let recs: Vec<HitRecord> = per
                        .iter()
                        .filter_map(|(id, s)| {
                            let e = ev.get(id).filter(|e| e.covered)?;
                            let rk = ret.get(id)?.rankings.get(&primary)?;
                            Some(HitRecord {
                                hit_rank: first_hit_rank(rk, e),
                                em: s.em,
                                f1: s.f1,
                            })
                        })
                        .collect();
                    by_model.insert(model.clone(), hit_rank_stratify(&recs));
                }
                strata = Some(by_model);
            }
        }
        RetrievalSection {
            budget: self.m.budget,
            primary: primary.name().to_owned(),
            requests,
            oversize,
            recall,
            evidence_survival: survival,
            strata,
        }
    }

    // ---- evidence

    fn evidence_for(&self, ex: &Example, mode: EvidenceMode) -> EvidenceSet {
        let t = self.b.table_of(ex);
        match mode {
            EvidenceMode::AnswerString => detect_answer_rows(t, &ex.gold_answers, self.cfg()),
            EvidenceMode::Hybrid => detect_hybrid(t, &ex.question, &ex.gold_answers, self.cfg(), self.m.hybrid_theta),
            EvidenceMode::Sql => ex
                .gold_sql
                .as_deref()
                .and_then(|s| parse_sql(s).ok())
                .and_then(|q| derive_sql_rows(t, &q).ok())
                .map_or_else(|| EvidenceSet::new(EvidenceMode::Sql, BTreeSet::new()), |r| r.evidence),
        }
    }

    fn evidence(&mut self) -> BTreeMap<String, EvidenceSet> {
        let mode = self.m.evidence_mode;
        let sets: Vec<EvidenceSet> = self.qa.par_iter().map(|ex| self.evidence_for(ex, mode)).collect();
        let out: BTreeMap<String, EvidenceSet> = self.qa.iter().map(|e| e.id.clone()).zip(sets).collect();
        let recs: Vec<EvidenceRecord> = out.iter().map(|(id, s)| EvidenceRecord::new(id, s)).collect();
        let f = write_lines(&mut self.files, "evidence.jsonl", &recs);
        self.add_provenance("evidence", f);
        out
    }

    fn evidence_section(
        &mut self,
        ev: &BTreeMap<String, EvidenceSet>,
        sql_rows: &BTreeMap<String, crate::evidence::SqlRows>,
    ) -> EvidenceSection {
        let gold: BTreeMap<String, EvidenceSet> =
            sql_rows.iter().map(|(id, r)| (id.clone(), r.evidence.clone())).collect();
        let mut detectors = BTreeMap::new();
        if !gold.is_empty() {
            for mode in [EvidenceMode::AnswerString, EvidenceMode::Hybrid] {
                let pred: BTreeMap<String, EvidenceSet> = gold
                    .keys()
                    .map(|id| (id.clone(), self.evidence_for(&self.b.examples[id], mode)))
                    .collect();
                let score = validate_detector(&pred, &gold).expect("same ids");
                detectors.insert(mode.name().to_owned(), score);
            }
        }
        let recs: Vec<SqlRowsRecord> = sql_rows
            .iter()
            .map(|(id, r)| SqlRowsRecord {
                id: id.clone(),
                rows: r.evidence.rows.iter().copied().collect(),
                type_error_rows: r.type_error_rows.clone(),
            })
            .collect();
        let f = write_lines(&mut self.files, "sql_rows.jsonl", &recs);
        self.add_provenance("evidence", f);
        EvidenceSection {
            mode: self.m.evidence_mode,
            n: ev.len(),
            covered: ev.values().filter(|e| e.covered).count(),
            coverage: evidence_coverage(ev.values()),
            sql_gold_examples: sql_rows.len(),
            type_error_rows: sql_rows.values().map(|r| r.type_error_rows.len()).sum(),
            detectors,
            audit: audit_agreement(&self.b.judgments).expect("duplicates rejected at ingest"),
        }
    }

    // ---- sql

    fn sql_one(&self, ex: &Example, sql: &str) -> (SqlRecord, Option<String>) {
        let (q, simple) = match parse_sql(sql) {
            Ok(q) => {
                let s = classify_simple(&q);
                (q, s)
            }
            Err(_) => (
                SqlQuery {
                    raw: sql.to_owned(),
                    kind: QueryKind::ComplexOpaque {
                        features: vec!["unparsed".into()],
                    },
                },
                false,
            ),
        };
        let mut problem = None;
        let conn = match self.b.db_paths.get(&ex.id) {
            Some(p) => open_database(p).map_err(|e| {
                problem = Some(format!("cannot open {}: {e}", p.display()));
                e
            }),
            None => build_database(self.b.table_of(ex), &target_table(&q)),
        };
        let result = match conn {
            Ok(c) => execute_gold(&c, &q),
            Err(e) => OracleResult::error(e.to_string()),
        };
        let verdict = result
            .is_ok()
            .then(|| compare_denotation(&result.denotation, &ex.gold_answers, self.cfg()));
        (
            SqlRecord {
                id: ex.id.clone(),
                simple,
                result,
                verdict,
            },
            problem,
        )
    }

    fn sql_stage(&mut self) -> BTreeMap<String, SqlRecord> {
        let with_sql: Vec<&Example> = self.qa.iter().copied().filter(|e| e.gold_sql.is_some()).collect();
        let results: Vec<(SqlRecord, Option<String>)> = with_sql
            .par_iter()
            .map(|ex| self.sql_one(ex, ex.gold_sql.as_deref().expect("filtered")))
            .collect();
        let mut out = BTreeMap::new();
        for (rec, problem) in results {
            if let Some(p) = problem {
                self.fail(Failure::new("sql", &rec.id, p));
            }
            out.insert(rec.id.clone(), rec);
        }
        let recs: Vec<&SqlRecord> = out.values().collect();
        let f = write_lines(&mut self.files, "sql.jsonl", &recs);
        self.add_provenance("accounting", f);
        out
    }

    fn sql_section(&self, recs: &BTreeMap<String, SqlRecord>) -> SqlSection {
        let outcomes: Vec<OracleOutcome> = recs
            .values()
            .map(|r| OracleOutcome {
                status: r.result.status,
                verdict: r.verdict,
            })
            .collect();
        let pairs: Vec<(Vec<String>, Vec<String>)> = recs
            .values()
            .filter(|r| r.verdict.is_some_and(|v| !v.exact))
            .map(|r| (r.result.denotation.clone(), self.b.examples[&r.id].gold_answers.clone()))
            .collect();
        let simple = recs.values().filter(|r| r.simple).count();
        SqlSection {
            accounting: accounting(&outcomes),
            simple_sql: simple,
            simple_coverage: (!recs.is_empty()).then(|| simple as f64 / recs.len() as f64),
            tolerance: tolerance_ablation(&pairs, &ToleranceSetting::standard(), self.cfg()),
        }
    }

    // ---- metrics

    fn scores(&mut self) -> BTreeMap<String, BTreeMap<String, ExampleScore>> {
        let mut out = BTreeMap::new();
        for (model, preds) in &self.b.predictions {
            if !covers(preds, &self.qa) {
                continue;
            }
            let mut per = BTreeMap::new();
            for ex in &self.qa {
                match preds.get(&ex.id) {
                    Some(p) => {
                        per.insert(ex.id.clone(), score(p, &ex.gold_answers));
                    }
                    None => self
                        .failures
                        .push(Failure::new("metrics", &ex.id, format!("no prediction from {model}"))),
                }
            }
            let lines: Vec<ScoreLine> = per
                .iter()
                .map(|(id, s)| ScoreLine {
                    id: id.clone(),
                    em: s.em,
                    f1: s.f1,
                })
                .collect();
            let f = write_lines(&mut self.files, &format!("scores.{}.jsonl", file_tag(model)), &lines);
            self.add_provenance("metrics", f);
            out.insert(model.clone(), per);
        }
        out
    }

    fn metric_blocks(&self, scores: &BTreeMap<String, BTreeMap<String, ExampleScore>>) -> BTreeMap<String, MetricBlock> {
        scores
            .iter()
            .filter_map(|(model, per)| {
                let em: Vec<f64> = per.values().map(|s| s.em).collect();
                let f1: Vec<f64> = per.values().map(|s| s.f1).collect();
                let seed = self.seed(&format!("bootstrap:{model}"));
                MetricBlock::compute(&em, &f1, self.m.bootstrap_resamples, seed).map(|b| (model.clone(), b))
            })
            .collect()
    }

    fn verdict_accuracy(&mut self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        for (model, preds) in &self.b.predictions {
            if !covers(preds, &self.verdicts) {
                continue;
            }
            let (mut n, mut correct) = (0usize, 0usize);
            for ex in &self.verdicts {
                match preds.get(&ex.id) {
                    Some(p) => {
                        n += 1;
                        let label = ex.label.expect("validated verdict");
                        correct += usize::from(p.trim().eq_ignore_ascii_case(label.name()));
                    }
                    None => self
                        .failures
                        .push(Failure::new("metrics", &ex.id, format!("no prediction from {model}"))),
                }
            }
            if n > 0 {
                out.insert(model.clone(), correct as f64 / n as f64);
            }
        }
        out
    }

    fn classifier_scores(&self) -> BTreeMap<String, Option<crate::metrics::classifier::ClassifierMetrics>> {
        self.b
            .scores
            .iter()
            .map(|(tag, scores)| {
                let (mut s, mut l) = (Vec::new(), Vec::new());
                for ex in &self.verdicts {
                    let binary = match ex.label {
                        Some(VerdictLabel::Entailed) => true,
                        Some(VerdictLabel::Refuted) => false,
                        _ => continue,
                    };
                    if let Some(v) = scores.get(&ex.id) {
                        s.push(*v);
                        l.push(binary);
                    }
                }
                (tag.clone(), classifier_metrics(&s, &l).ok())
            })
            .collect()
    }

    // ---- attribution

    fn attribution(
        &mut self,
        sql: Option<&BTreeMap<String, SqlRecord>>,
        evidence: Option<&BTreeMap<String, EvidenceSet>>,
        retrieved: Option<&BTreeMap<String, Retrieved>>,
    ) -> Result<BTreeMap<String, AttributionSection>, HarnessError> {
        let survived: BTreeMap<String, BTreeSet<usize>> = retrieved
            .map(|r| {
                r.iter()
                    .filter_map(|(id, x)| x.pruned.as_ref().map(|p| (id.clone(), p.survived())))
                    .collect()
            })
            .unwrap_or_default();
        let mut out = BTreeMap::new();
        let sweep_configs = standard_sweep_configs(self.cfg());
        for (model, preds) in &self.b.predictions {
            if !covers(preds, &self.qa) {
                continue;
            }
            let mut cases = Vec::new();
            for ex in &self.qa {
                let Some(pred) = preds.get(&ex.id) else {
                    continue;
                };
                let rec = sql.and_then(|s| s.get(&ex.id));
                let (oracle, source): (&[String], OracleSource) = match rec {
                    Some(r) if r.result.status == ExecStatus::ExecError => (&ex.gold_answers, OracleSource::Sql),
                    Some(r) if !r.result.denotation.is_empty() => (&r.result.denotation, OracleSource::Sql),
                    _ => (&ex.gold_answers, OracleSource::GoldAnswer),
                };
                let retrieval = match (evidence.and_then(|e| e.get(&ex.id)), survived.get(&ex.id)) {
                    (Some(e), Some(s)) => Some(RetrievalInfo {
                        evidence: &e.rows,
                        survived: s,
                    }),
                    _ => None,
                };
                cases.push(AttributionCase {
                    id: &ex.id,
                    pred,
                    oracle,
                    table: self.b.table_of(ex),
                    retrieval,
                    sql_status: rec.map(|r| r.result.status),
                    oracle_source: source,
                });
            }
            let cfg = *self.cfg();
            let results: Vec<_> = cases.par_iter().map(|c| attribute(c, &cfg)).collect();
            let mut records: Vec<AttributionRecord> = Vec::new();
            let mut ok_cases = Vec::new();
            for (c, r) in cases.iter().zip(results) {
                match r {
                    Ok(rec) => {
                        records.push(rec);
                        ok_cases.push(*c);
                    }
                    Err(e) => self.failures.push(Failure::new("attribution", c.id, e.to_string())),
                }
            }
            let mut oracle_sources = BTreeMap::new();
            for r in &records {
                let key = match r.oracle_source {
                    OracleSource::Sql => "sql",
                    OracleSource::GoldAnswer => "gold_answer",
                };
                *oracle_sources.entry(key.to_owned()).or_insert(0) += 1;
            }
            let sweep = sensitivity_sweep(&ok_cases, &sweep_configs)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let f = write_lines(&mut self.files, &format!("attribution.{}.jsonl", file_tag(model)), &records);
            self.add_provenance("attribution", f);
            out.insert(
                model.clone(),
                AttributionSection {
                    n: records.len(),
                    oracle_sources,
                    distribution: attribution_distribution(&records, None),
                    sweep,
                },
            );
        }
        Ok(out)
    }

    // ---- governance

    fn governance(&mut self) -> Result<GovernanceSection, HarnessError> {
        let lfs = load_catalog(self.catalog).map_err(|e| HarnessError::Config(e.to_string()))?;
        let labelers: Vec<&dyn Labeler> = lfs.iter().map(|l| l as &dyn Labeler).collect();
        let pairs: Vec<(&Example, &Table)> = self.verdicts.iter().map(|e| (*e, self.b.table_of(e))).collect();
        let matrix = apply_lfs(&labelers, &pairs).map_err(|e| HarnessError::Config(e.to_string()))?;
        let gold: Vec<Option<VerdictLabel>> = self.verdicts.iter().map(|e| e.label).collect();
        let report = governance_report(&matrix, &gold);
        let votes: Vec<VoteRecord> = matrix
            .example_ids
            .iter()
            .zip(&matrix.votes)
            .zip(&gold)
            .map(|((id, row), g)| VoteRecord {
                id: id.clone(),
                gold: *g,
                votes: matrix.lf_names.iter().cloned().zip(row.iter().copied()).collect(),
            })
            .collect();
        let f = write_lines(&mut self.files, "lf_votes.jsonl", &votes);
        self.add_provenance("governance", f);

        let base: Vec<Example> = self.verdicts.iter().map(|e| (*e).clone()).collect();
        let mut contrast = BTreeMap::new();
        for kind in [ContrastKind::BiasStrip, ContrastKind::ComparatorSwap] {
            let set = contrast_set(&base, kind);
            let triggered: BTreeSet<String> =
                set.iter().filter(|c| c.triggered).map(|c| c.source_id.clone()).collect();
            let mut flips = BTreeMap::new();
            for (model, preds) in &self.b.predictions {
                let mut before = BTreeMap::new();
                let mut after = BTreeMap::new();
                for c in &set {
                    if let (Some(b), Some(a)) = (preds.get(&c.source_id), preds.get(&c.example.id)) {
                        before.insert(c.source_id.clone(), b.trim().to_lowercase());
                        after.insert(c.source_id.clone(), a.trim().to_lowercase());
                    }
                }
                if before.is_empty() {
                    continue;
                }
                let trig: BTreeSet<String> = triggered.iter().filter(|id| before.contains_key(*id)).cloned().collect();
                flips.insert(model.clone(), flip_rate(&before, &after, &trig).expect("aligned by construction"));
            }
            let recs: Vec<ContrastRecord> = set
                .iter()
                .map(|c| ContrastRecord {
                    id: c.example.id.clone(),
                    source_id: c.source_id.clone(),
                    question: c.example.question.clone(),
                    table_id: c.example.table_id.clone(),
                    triggered: c.triggered,
                })
                .collect();
            let f = write_lines(&mut self.files, &format!("contrast.{}.jsonl", kind.name()), &recs);
            self.add_provenance("governance", f);
            if self.m.stages.retrieval {
                let targets: Vec<(&Example, &Table)> =
                    set.iter().map(|c| (&c.example, self.b.table_of(&c.example))).collect();
                let reqs = self.build_requests(&targets, &BTreeMap::new());
                let f = write_lines(&mut self.files, &format!("requests.contrast.{}.jsonl", kind.name()), &reqs);
                self.add_provenance("governance", f);
            }
            contrast.insert(
                kind.name().to_owned(),
                ContrastSummary {
                    n: set.len(),
                    triggered: triggered.len(),
                    flip_rate: flips,
                },
            );
        }
        Ok(GovernanceSection {
            catalog_hash: self.m.lf_catalog_hash.clone(),
            report,
            contrast,
        })
    }
}

/// Train the feature-only verdict classifier on a seeded half of the
/// entailed/refuted examples and score it on the other half, with each
/// feature group ablated in turn. `None` when either half lacks a class.
pub fn artifact_detector(verdicts: &[&Example], b: &DatasetBundle, seed: u64) -> Option<ArtifactReport> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for ex in verdicts {
        let y = match ex.label? {
            VerdictLabel::Entailed => true,
            VerdictLabel::Refuted => false,
            VerdictLabel::Nei => continue,
        };
        let f = extract_features(&ex.question, b.table_of(ex));
        if derive_seed(seed, &format!("split:{}", ex.id)).is_multiple_of(2) {
            train.push((f, y));
        } else {
            test.push((f, y));
        }
    }
    let two_classes = |v: &[(crate::metrics::features::ArtifactFeatures, bool)]| {
        v.iter().any(|x| x.1) && v.iter().any(|x| !x.1)
    };
    if !two_classes(&train) || !two_classes(&test) {
        return None;
    }
    let fit = |mask: FeatureMask| {
        let xs: Vec<Vec<f64>> = train.iter().map(|(f, _)| f.to_vec(mask)).collect();
        let ys: Vec<bool> = train.iter().map(|(_, y)| *y).collect();
        let cfg = TrainConfig {
            seed: derive_seed(seed, "artifact"),
            ..TrainConfig::default()
        };
        let model = train_linear(&xs, &ys, &mask.slots(), cfg, "verdicts").ok()?;
        let tx: Vec<Vec<f64>> = test.iter().map(|(f, _)| f.to_vec(mask)).collect();
        let ty: Vec<bool> = test.iter().map(|(_, y)| *y).collect();
        classifier_metrics(&predict(&model, &tx), &ty).ok()
    };
    let full = fit(FeatureMask::ALL)?;
    let mut ablations = BTreeMap::new();
    for (name, mask) in [("no_bias", FeatureMask::NO_BIAS), ("no_overlap", FeatureMask::NO_OVERLAP)] {
        ablations.insert(name.to_owned(), fit(mask)?);
    }
    Some(ArtifactReport {
        n_train: train.len(),
        n_test: test.len(),
        slots: FeatureMask::ALL.slots(),
        full,
        ablations,
    })
}

/// Inference requests for every example under the manifest's primary
/// retriever and budget.
pub fn requests(manifest: &RunManifest, bundle: &DatasetBundle) -> Result<(Vec<InferenceRequest>, Vec<Failure>), HarnessError> {
    manifest.validate()?;
    let mut r = Runner::new(manifest, bundle, "");
    let sql_rows = r.sql_rows();
    let targets: Vec<(&Example, &Table)> = bundle.examples.values().map(|e| (e, bundle.table_of(e))).collect();
    let reqs = r.build_requests(&targets, &sql_rows);
    Ok((reqs, r.failures))
}
