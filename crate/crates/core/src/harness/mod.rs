//! Dataset ingestion, run orchestration, synthetic data and report output.

mod manifest;
mod report;
mod run;
mod synth;
mod verify;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evidence::AuditJudgment;
use crate::example::{Example, Task, VerdictLabel};
use crate::governance::ContrastKind;
use crate::jsonl::{self, JsonlError};
use crate::probes::ProbeKind;
use crate::retrieval::{EmbeddingTable, ScoreRecord};
use crate::rng::{derive_seed, sha256_hex};
use crate::table::Table;

pub use manifest::{RetrieverSpec, RunManifest, Stages, TOOL_VERSION};
pub use report::{
    emit_plots, render_markdown, ArtifactReport, AttributionSection, ContrastSummary, EvidenceSection,
    FailureSummary, GovernanceSection, NgramSummary, ProbeSection, Report, RetrievalSection, SqlSection,
};
pub use run::{
    artifact_detector, requests, run, run_with_workers, workers_from_env, Failure, InferenceRequest, RunOutput,
    FAIL_SOFT_THRESHOLD,
};
pub use synth::{synth_generate, SynthOutput, PLANTED_MODEL};
pub use verify::{verify, VerifyCheck, VerifyReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}:{line}: schema error: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{file}: {id} references unknown {target}")]
    DanglingReference {
        file: String,
        id: String,
        target: String,
    },
    #[error("{file}: duplicate id {id}")]
    DuplicateId { file: String, id: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl From<JsonlError> for HarnessError {
    fn from(e: JsonlError) -> Self {
        match e {
            JsonlError::Io { path, source } => HarnessError::Io { path, source },
            JsonlError::Schema { path, line, message } => HarnessError::Schema { path, line, message },
        }
    }
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.to_owned(),
            source,
        }
    }
}

/// Gold SQL JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldSqlRecord {
    pub id: String,
    pub sql: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db_path: Option<PathBuf>,
}

/// Predictions JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub prediction: String,
}

/// Classifier scores JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierScore {
    pub id: String,
    pub score: f64,
}

/// Reference corpus line for n-gram overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
}

/// Input files of a bundle. Tagged files use the tag as the model name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BundlePaths {
    pub tables: PathBuf,
    pub examples: PathBuf,
    #[serde(default)]
    pub gold_sql: Option<PathBuf>,
    #[serde(default)]
    pub predictions: Vec<(String, PathBuf)>,
    #[serde(default)]
    pub scores: Vec<(String, PathBuf)>,
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    /// Evidence audit judgments.
    #[serde(default)]
    pub judgments: Option<PathBuf>,
    /// External per-row scores, ranked by the `external` retriever.
    #[serde(default)]
    pub row_scores: Option<PathBuf>,
}

/// Everything a run reads, with referential integrity checked.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetBundle {
    pub tables: BTreeMap<String, Table>,
    pub examples: BTreeMap<String, Example>,
    pub db_paths: BTreeMap<String, PathBuf>,
    /// model tag -> example id -> prediction
    pub predictions: BTreeMap<String, BTreeMap<String, String>>,
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
    pub embeddings: BTreeMap<String, EmbeddingTable>,
    pub corpus: Vec<CorpusRecord>,
    pub judgments: Vec<AuditJudgment>,
    /// example id -> one external score per table row
    pub row_scores: BTreeMap<String, Vec<f64>>,
    /// Input file name -> sha256 of its bytes.
    pub digests: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleCounts {
    pub tables: usize,
    pub qa_examples: usize,
    pub verdict_examples: usize,
    pub gold_sql: usize,
    pub predictions: BTreeMap<String, usize>,
    pub scores: BTreeMap<String, usize>,
    pub embeddings: usize,
    pub corpus: usize,
    #[serde(default)]
    pub judgments: usize,
    #[serde(default)]
    pub row_scores: usize,
}

/// Split a derived id `{source}::{suffix}` whose suffix names a probe or a
/// contrast set.
pub fn split_derived_id(id: &str) -> Option<(&str, &str)> {
    let (src, suffix) = id.rsplit_once("::")?;
    let known = suffix.parse::<ProbeKind>().is_ok()
        || [ContrastKind::BiasStrip, ContrastKind::ComparatorSwap]
            .iter()
            .any(|k| k.name() == suffix);
    known.then_some((src, suffix))
}

impl DatasetBundle {
    pub fn counts(&self) -> BundleCounts {
        let task = |t: Task| self.examples.values().filter(|e| e.task == t).count();
        BundleCounts {
            tables: self.tables.len(),
            qa_examples: task(Task::Qa),
            verdict_examples: task(Task::Verdict),
            gold_sql: self.examples.values().filter(|e| e.gold_sql.is_some()).count(),
            predictions: self.predictions.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
            scores: self.scores.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
            embeddings: self.embeddings.len(),
            corpus: self.corpus.len(),
            judgments: self.judgments.len(),
            row_scores: self.row_scores.len(),
        }
    }

    /// True when `id` names an example or a probe/contrast variant of one.
    pub fn resolves(&self, id: &str) -> bool {
        self.examples.contains_key(id)
            || split_derived_id(id).is_some_and(|(src, _)| self.examples.contains_key(src))
    }

    pub fn table_of(&self, ex: &Example) -> &Table {
        &self.tables[&ex.table_id]
    }

    pub fn examples_of(&self, task: Task) -> impl Iterator<Item = &Example> + '_ {
        self.examples.values().filter(move |e| e.task == task)
    }

    /// Check every cross-file reference.
    pub fn check_integrity(&self) -> Result<(), HarnessError> {
        for ex in self.examples.values() {
            if !self.tables.contains_key(&ex.table_id) {
                return Err(HarnessError::DanglingReference {
                    file: "examples".into(),
                    id: ex.id.clone(),
                    target: format!("table {}", ex.table_id),
                });
            }
        }
        for (tag, preds) in &self.predictions {
            if let Some(id) = preds.keys().find(|id| !self.resolves(id)) {
                return Err(HarnessError::DanglingReference {
                    file: format!("predictions:{tag}"),
                    id: id.clone(),
                    target: "example".into(),
                });
            }
        }
        for (tag, scores) in &self.scores {
            if let Some(id) = scores.keys().find(|id| !self.examples.contains_key(*id)) {
                return Err(HarnessError::DanglingReference {
                    file: format!("scores:{tag}"),
                    id: id.clone(),
                    target: "example".into(),
                });
            }
        }
        if let Some(id) = self.embeddings.keys().find(|id| !self.examples.contains_key(*id)) {
            return Err(HarnessError::DanglingReference {
                file: "embeddings".into(),
                id: id.clone(),
                target: "example".into(),
            });
        }
        if let Some(id) = self.row_scores.keys().find(|id| !self.examples.contains_key(*id)) {
            return Err(HarnessError::DanglingReference {
                file: "row_scores".into(),
                id: id.clone(),
                target: "example".into(),
            });
        }
        if let Err(crate::evidence::EvidenceError::DuplicateJudgment { judge, id, row }) =
            crate::evidence::audit_agreement(&self.judgments)
        {
            return Err(HarnessError::DuplicateId {
                file: "judgments".into(),
                id: format!("{id} row {row} by {judge}"),
            });
        }
        for j in &self.judgments {
            let Some(ex) = self.examples.get(&j.id) else {
                return Err(HarnessError::DanglingReference {
                    file: "judgments".into(),
                    id: j.id.clone(),
                    target: "example".into(),
                });
            };
            if j.row >= self.table_of(ex).n_rows() {
                return Err(HarnessError::DanglingReference {
                    file: "judgments".into(),
                    id: format!("{} row {}", j.id, j.row),
                    target: "table row".into(),
                });
            }
        }
        Ok(())
    }

    /// Write the bundle as JSONL files under `dir` and return their paths.
    pub fn write(&self, dir: &Path) -> Result<BundlePaths, HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let put = |name: &str, body: String| -> Result<PathBuf, HarnessError> {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| HarnessError::io(&p, e))?;
            Ok(p)
        };
        let tables: Vec<&Table> = self.tables.values().collect();
        let examples: Vec<&Example> = self.examples.values().collect();
        let mut paths = BundlePaths {
            tables: put("tables.jsonl", jsonl::to_string(&tables))?,
            examples: put("examples.jsonl", jsonl::to_string(&examples))?,
            ..BundlePaths::default()
        };
        if !self.db_paths.is_empty() {
            let recs: Vec<GoldSqlRecord> = self
                .examples
                .values()
                .filter_map(|e| {
                    Some(GoldSqlRecord {
                        id: e.id.clone(),
                        sql: e.gold_sql.clone()?,
                        db_path: self.db_paths.get(&e.id).cloned(),
                    })
                })
                .collect();
            paths.gold_sql = Some(put("gold_sql.jsonl", jsonl::to_string(&recs))?);
        }
        for (tag, preds) in &self.predictions {
            let recs: Vec<PredictionRecord> = preds
                .iter()
                .map(|(id, p)| PredictionRecord {
                    id: id.clone(),
                    prediction: p.clone(),
                })
                .collect();
            let p = put(&format!("predictions.{}.jsonl", file_tag(tag)), jsonl::to_string(&recs))?;
            paths.predictions.push((tag.clone(), p));
        }
        for (tag, scores) in &self.scores {
            let recs: Vec<ClassifierScore> = scores
                .iter()
                .map(|(id, s)| ClassifierScore { id: id.clone(), score: *s })
                .collect();
            let p = put(&format!("scores.{}.jsonl", file_tag(tag)), jsonl::to_string(&recs))?;
            paths.scores.push((tag.clone(), p));
        }
        if !self.embeddings.is_empty() {
            let recs: Vec<&EmbeddingTable> = self.embeddings.values().collect();
            paths.embeddings = Some(put("embeddings.jsonl", jsonl::to_string(&recs))?);
        }
        if !self.corpus.is_empty() {
            paths.corpus = Some(put("corpus.jsonl", jsonl::to_string(&self.corpus))?);
        }
        if !self.judgments.is_empty() {
            paths.judgments = Some(put("judgments.jsonl", jsonl::to_string(&self.judgments))?);
        }
        if !self.row_scores.is_empty() {
            let recs: Vec<ScoreRecord> = self
                .row_scores
                .iter()
                .map(|(id, s)| ScoreRecord {
                    id: id.clone(),
                    scores: s.clone(),
                })
                .collect();
            paths.row_scores = Some(put("row_scores.jsonl", jsonl::to_string(&recs))?);
        }
        Ok(paths)
    }
}

/// Model tag made safe for file names.
pub fn file_tag(tag: &str) -> String {
    tag.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._@-".contains(c) { c } else { '_' })
        .collect()
}

fn digest_file(path: &Path, digests: &mut BTreeMap<String, String>, key: String) -> Result<(), HarnessError> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    digests.insert(key, sha256_hex(&bytes));
    Ok(())
}

fn schema(path: &Path, line: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Schema {
        path: path.to_owned(),
        line,
        message: message.into(),
    }
}

fn duplicate(path: &Path, id: &str) -> HarnessError {
    HarnessError::DuplicateId {
        file: path.display().to_string(),
        id: id.to_owned(),
    }
}

/// Load and cross-check every input file.
pub fn ingest(paths: &BundlePaths) -> Result<DatasetBundle, HarnessError> {
    let mut b = DatasetBundle::default();
    digest_file(&paths.tables, &mut b.digests, "tables".into())?;
    for (_, t) in jsonl::read_numbered::<Table>(&paths.tables)? {
        let id = t.table_id().to_owned();
        if b.tables.insert(id.clone(), t).is_some() {
            return Err(duplicate(&paths.tables, &id));
        }
    }
    digest_file(&paths.examples, &mut b.digests, "examples".into())?;
    for (line, ex) in jsonl::read_numbered::<Example>(&paths.examples)? {
        ex.validate().map_err(|e| schema(&paths.examples, line, e.to_string()))?;
        if split_derived_id(&ex.id).is_some() {
            return Err(schema(&paths.examples, line, format!("id {} uses a reserved suffix", ex.id)));
        }
        let id = ex.id.clone();
        if b.examples.insert(id.clone(), ex).is_some() {
            return Err(duplicate(&paths.examples, &id));
        }
    }
    if let Some(p) = &paths.gold_sql {
        digest_file(p, &mut b.digests, "gold_sql".into())?;
        let mut seen = std::collections::BTreeSet::new();
        for (_, rec) in jsonl::read_numbered::<GoldSqlRecord>(p)? {
            if !seen.insert(rec.id.clone()) {
                return Err(duplicate(p, &rec.id));
            }
            let ex = b.examples.get_mut(&rec.id).ok_or_else(|| HarnessError::DanglingReference {
                file: p.display().to_string(),
                id: rec.id.clone(),
                target: "example".into(),
            })?;
            ex.gold_sql = Some(rec.sql);
            if let Some(db) = rec.db_path {
                let db = if db.is_relative() {
                    p.parent().unwrap_or(Path::new(".")).join(db)
                } else {
                    db
                };
                b.db_paths.insert(rec.id, db);
            }
        }
    }
    for (tag, p) in &paths.predictions {
        digest_file(p, &mut b.digests, format!("predictions:{tag}"))?;
        let mut m = BTreeMap::new();
        for (_, rec) in jsonl::read_numbered::<PredictionRecord>(p)? {
            if m.insert(rec.id.clone(), rec.prediction).is_some() {
                return Err(duplicate(p, &rec.id));
            }
        }
        if b.predictions.insert(tag.clone(), m).is_some() {
            return Err(HarnessError::DuplicateId {
                file: "predictions".into(),
                id: tag.clone(),
            });
        }
    }
    for (tag, p) in &paths.scores {
        digest_file(p, &mut b.digests, format!("scores:{tag}"))?;
        let mut m = BTreeMap::new();
        for (line, rec) in jsonl::read_numbered::<ClassifierScore>(p)? {
            if !rec.score.is_finite() {
                return Err(schema(p, line, "score must be finite"));
            }
            if m.insert(rec.id.clone(), rec.score).is_some() {
                return Err(duplicate(p, &rec.id));
            }
        }
        if b.scores.insert(tag.clone(), m).is_some() {
            return Err(HarnessError::DuplicateId {
                file: "scores".into(),
                id: tag.clone(),
            });
        }
    }
    if let Some(p) = &paths.embeddings {
        digest_file(p, &mut b.digests, "embeddings".into())?;
        for (line, rec) in jsonl::read_numbered::<EmbeddingTable>(p)? {
            rec.validate(None).map_err(|e| schema(p, line, e.to_string()))?;
            let id = rec.id.clone();
            if b.embeddings.insert(id.clone(), rec).is_some() {
                return Err(duplicate(p, &id));
            }
        }
    }
    if let Some(p) = &paths.corpus {
        digest_file(p, &mut b.digests, "corpus".into())?;
        b.corpus = jsonl::read(p)?;
    }
    if let Some(p) = &paths.judgments {
        digest_file(p, &mut b.digests, "judgments".into())?;
        b.judgments = jsonl::read(p)?;
    }
    if let Some(p) = &paths.row_scores {
        digest_file(p, &mut b.digests, "row_scores".into())?;
        for (line, rec) in jsonl::read_numbered::<ScoreRecord>(p)? {
            if rec.scores.iter().any(|s| !s.is_finite()) {
                return Err(schema(p, line, "scores must be finite"));
            }
            if b.row_scores.insert(rec.id.clone(), rec.scores).is_some() {
                return Err(duplicate(p, &rec.id));
            }
        }
    }
    b.check_integrity()?;
    Ok(b)
}

/// Seeded label-stratified sample of at most `per_label` verdict examples
/// per label. Qa examples are returned unchanged. Output is id-ordered.
pub fn stratified_sample(examples: &[Example], per_label: usize, seed: u64) -> Vec<Example> {
    let mut by_label: BTreeMap<Option<VerdictLabel>, Vec<&Example>> = BTreeMap::new();
    let mut out: Vec<Example> = Vec::new();
    for ex in examples {
        match ex.task {
            Task::Qa => out.push(ex.clone()),
            Task::Verdict => by_label.entry(ex.label).or_default().push(ex),
        }
    }
    for group in by_label.values_mut() {
        group.sort_by_key(|e| (derive_seed(seed, &format!("sample:{}", e.id)), e.id.clone()));
        out.extend(group.iter().take(per_label).map(|e| (*e).clone()));
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}
