//! Contamination probes: table and question transforms, canaries and n-gram
//! overlap. Every random choice comes from a generator seeded by the global
//! seed and the example id.

pub mod mentions;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::example::Example;
use crate::metrics::MetricBlock;
use crate::rng::example_rng;
use crate::table::{normalize_text, GroundingConfig, Table};

pub use mentions::{find_mentions, Mention};

pub const DEFAULT_NGRAM_N: usize = 8;
pub const DEFAULT_TEMPLATES: &str = include_str!("../../data/paraphrase_templates.jsonl");

#[derive(Debug, Error, PartialEq)]
pub enum ProbeError {
    #[error("duplicate header {0:?} after renaming")]
    DuplicateHeader(String),
    #[error("no swappable entity in the question")]
    NoSwapPossible,
    #[error("no paraphrase template matches")]
    NoTemplateMatch,
    #[error("canary {0:?} already occurs in the table or question")]
    CanaryCollision(String),
    #[error("canary is empty")]
    EmptyCanary,
    #[error("bad template {name}: {reason}")]
    BadTemplate { name: String, reason: String },
    #[error("example ids differ: {0}")]
    IdMismatch(String),
    #[error("{0} is a measurement, not a transform")]
    NotATransform(ProbeKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Canary,
    NgramOverlap,
    EntitySwap,
    Paraphrase,
    RowPermute,
    ColPermute,
    SchemaRename,
    CounterfactualSwap,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 8] = [
        ProbeKind::Canary,
        ProbeKind::NgramOverlap,
        ProbeKind::EntitySwap,
        ProbeKind::Paraphrase,
        ProbeKind::RowPermute,
        ProbeKind::ColPermute,
        ProbeKind::SchemaRename,
        ProbeKind::CounterfactualSwap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProbeKind::Canary => "canary",
            ProbeKind::NgramOverlap => "ngram_overlap",
            ProbeKind::EntitySwap => "entity_swap",
            ProbeKind::Paraphrase => "paraphrase",
            ProbeKind::RowPermute => "row_permute",
            ProbeKind::ColPermute => "col_permute",
            ProbeKind::SchemaRename => "schema_rename",
            ProbeKind::CounterfactualSwap => "counterfactual_swap",
        }
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProbeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProbeKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown probe kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    Preserving,
    Stress,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedExample {
    pub source_id: String,
    pub probe: ProbeKind,
    /// The perturbed example; its id is `{source_id}::{probe}`.
    pub example: Example,
    pub label_preserving_claim: Claim,
    /// The perturbed table when the probe changed it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Table>,
    /// Output position -> source index, for permutation probes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
}

/// Perturbed-examples JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedRecord {
    pub source_id: String,
    pub probe: ProbeKind,
    pub question: String,
    pub table_id: String,
    pub claim: Claim,
}

impl PerturbedExample {
    fn new(ex: &Example, probe: ProbeKind, claim: Claim) -> Self {
        let mut example = ex.clone();
        example.id = perturbed_id(&ex.id, probe);
        PerturbedExample {
            source_id: ex.id.clone(),
            probe,
            example,
            label_preserving_claim: claim,
            table: None,
            permutation: None,
        }
    }

    fn with_table(mut self, t: Table) -> Self {
        let id = format!("{}::{}::{}", self.example.table_id, self.probe, self.source_id);
        self.example.table_id = id.clone();
        self.table = Some(t.with_id(id));
        self
    }

    pub fn record(&self) -> PerturbedRecord {
        PerturbedRecord {
            source_id: self.source_id.clone(),
            probe: self.probe,
            question: self.example.question.clone(),
            table_id: self.example.table_id.clone(),
            claim: self.label_preserving_claim,
        }
    }
}

pub fn perturbed_id(source_id: &str, probe: ProbeKind) -> String {
    format!("{source_id}::{probe}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Rows,
    Cols,
}

/// Apply a seeded permutation along `axis`. The returned vector maps each
/// output position to its source index.
pub fn permute(t: &Table, axis: Axis, seed: u64) -> (Table, Vec<usize>) {
    let n = match axis {
        Axis::Rows => t.n_rows(),
        Axis::Cols => t.n_cols(),
    };
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut crate::rng::rng_from_seed(seed));
    (apply_permutation(t, axis, &perm), perm)
}

pub fn apply_permutation(t: &Table, axis: Axis, perm: &[usize]) -> Table {
    match axis {
        Axis::Rows => t.select(perm, &(0..t.n_cols()).collect::<Vec<_>>()),
        Axis::Cols => t.select(&(0..t.n_rows()).collect::<Vec<_>>(), perm),
    }
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (pos, &src) in perm.iter().enumerate() {
        inv[src] = pos;
    }
    inv
}

#[derive(Debug, Clone, PartialEq)]
pub enum RenameMode {
    /// Headers become `col_1..col_n`.
    Generic,
    SynonymMap(BTreeMap<String, String>),
}

pub fn rename_schema(t: &Table, mode: &RenameMode) -> Result<Table, ProbeError> {
    let headers: Vec<String> = match mode {
        RenameMode::Generic => (1..=t.n_cols()).map(|i| format!("col_{i}")).collect(),
        RenameMode::SynonymMap(m) => t
            .headers()
            .iter()
            .map(|h| m.get(h).cloned().unwrap_or_else(|| h.clone()))
            .collect(),
    };
    let mut seen = HashSet::new();
    for h in &headers {
        if !seen.insert(h) {
            return Err(ProbeError::DuplicateHeader(h.clone()));
        }
    }
    Ok(Table::new(t.table_id(), headers, t.rows().to_vec()).expect("shape unchanged"))
}

fn splice(q: &str, spans: &[(usize, usize, &str)]) -> String {
    let mut spans = spans.to_vec();
    spans.sort_by_key(|s| s.0);
    let mut out = String::with_capacity(q.len());
    let mut at = 0;
    for (s, e, text) in spans {
        out.push_str(&q[at..s]);
        out.push_str(text);
        at = e;
    }
    out.push_str(&q[at..]);
    out
}

fn casefold(s: &str) -> String {
    s.chars().flat_map(char::to_lowercase).collect()
}

/// Replace the longest question-mentioned cell value with a different value
/// drawn from the same column.
pub fn counterfactual_swap(ex: &Example, t: &Table, seed: u64) -> Result<PerturbedExample, ProbeError> {
    let ms = find_mentions(&ex.question, t);
    let target = ms
        .iter()
        .max_by(|a, b| {
            (a.end - a.start)
                .cmp(&(b.end - b.start))
                .then(b.start.cmp(&a.start))
        })
        .ok_or(ProbeError::NoSwapPossible)?;
    let folded = casefold(&target.value);
    let mut alternatives: Vec<String> = Vec::new();
    for v in t.column(target.col) {
        let v = v.trim();
        if !v.is_empty() && casefold(v) != folded && !alternatives.iter().any(|a| a == v) {
            alternatives.push(v.to_owned());
        }
    }
    if alternatives.is_empty() {
        return Err(ProbeError::NoSwapPossible);
    }
    let mut rng = example_rng(seed, &format!("counterfactual_swap:{}", ex.id));
    let pick = alternatives[rng.gen_range(0..alternatives.len())].clone();
    let spans: Vec<(usize, usize, &str)> = ms
        .iter()
        .filter(|m| m.value == target.value && m.col == target.col)
        .map(|m| (m.start, m.end, pick.as_str()))
        .collect();
    let mut p = PerturbedExample::new(ex, ProbeKind::CounterfactualSwap, Claim::Stress);
    p.example.question = splice(&ex.question, &spans);
    Ok(p)
}

/// Exchange the two earliest distinct entities mentioned in the question.
pub fn entity_swap(ex: &Example, t: &Table) -> Result<PerturbedExample, ProbeError> {
    let ms = find_mentions(&ex.question, t);
    let first = ms.first().ok_or(ProbeError::NoSwapPossible)?;
    let second = ms
        .iter()
        .find(|m| casefold(&m.value) != casefold(&first.value))
        .ok_or(ProbeError::NoSwapPossible)?;
    let a = &ex.question[first.start..first.end];
    let b = &ex.question[second.start..second.end];
    let mut p = PerturbedExample::new(ex, ProbeKind::EntitySwap, Claim::Unknown);
    p.example.question = splice(
        &ex.question,
        &[(first.start, first.end, b), (second.start, second.end, a)],
    );
    Ok(p)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub name: String,
    pub pattern: String,
    pub rewrite: String,
}

#[derive(Debug, Clone)]
pub struct Template {
    pub name: String,
    pub pattern: Regex,
    pub rewrite: String,
}

pub fn compile_templates(specs: &[TemplateSpec]) -> Result<Vec<Template>, ProbeError> {
    specs
        .iter()
        .map(|s| {
            Ok(Template {
                name: s.name.clone(),
                pattern: Regex::new(&s.pattern).map_err(|e| ProbeError::BadTemplate {
                    name: s.name.clone(),
                    reason: e.to_string(),
                })?,
                rewrite: s.rewrite.clone(),
            })
        })
        .collect()
}

/// The bundled template catalog.
pub fn default_templates() -> Vec<Template> {
    let specs: Vec<TemplateSpec> = DEFAULT_TEMPLATES
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("bundled catalog is valid"))
        .collect();
    compile_templates(&specs).expect("bundled catalog compiles")
}

/// Rewrite the question with the first template (catalog order) that matches.
pub fn paraphrase(ex: &Example, catalog: &[Template]) -> Result<PerturbedExample, ProbeError> {
    let tpl = catalog
        .iter()
        .find(|t| t.pattern.is_match(&ex.question))
        .ok_or(ProbeError::NoTemplateMatch)?;
    let mut p = PerturbedExample::new(ex, ProbeKind::Paraphrase, Claim::Preserving);
    p.example.question = tpl.pattern.replace(&ex.question, tpl.rewrite.as_str()).into_owned();
    Ok(p)
}

/// Append `canary` to one seeded cell (or add a row to an empty table).
pub fn inject_canary(ex: &Example, t: &Table, canary: &str, seed: u64) -> Result<PerturbedExample, ProbeError> {
    if canary.is_empty() {
        return Err(ProbeError::EmptyCanary);
    }
    if ex.question.contains(canary) || t.cells().chain(t.headers().iter().map(String::as_str)).any(|c| c.contains(canary)) {
        return Err(ProbeError::CanaryCollision(canary.to_owned()));
    }
    let mut rng = example_rng(seed, &format!("canary:{}", ex.id));
    let mut rows = t.rows().to_vec();
    if rows.is_empty() {
        let mut row = vec![String::new(); t.n_cols()];
        row[0] = canary.to_owned();
        rows.push(row);
    } else {
        let r = rng.gen_range(0..rows.len());
        let c = rng.gen_range(0..t.n_cols());
        let cell = &mut rows[r][c];
        if cell.is_empty() {
            *cell = canary.to_owned();
        } else {
            cell.push(' ');
            cell.push_str(canary);
        }
    }
    let table = Table::new(t.table_id(), t.headers().to_vec(), rows).expect("shape unchanged");
    Ok(PerturbedExample::new(ex, ProbeKind::Canary, Claim::Unknown).with_table(table))
}

/// Ids whose text contains the canary, sorted.
pub fn detect_canary<'a>(texts: impl IntoIterator<Item = (&'a str, &'a str)>, canary: &str) -> Vec<String> {
    let found: BTreeSet<String> = texts
        .into_iter()
        .filter(|(_, text)| !canary.is_empty() && text.contains(canary))
        .map(|(id, _)| id.to_owned())
        .collect();
    found.into_iter().collect()
}

/// Run one transform probe on an example.
pub fn apply_probe(
    kind: ProbeKind,
    ex: &Example,
    t: &Table,
    seed: u64,
    templates: &[Template],
    canary: &str,
) -> Result<PerturbedExample, ProbeError> {
    let key = |k: ProbeKind| crate::rng::derive_seed(seed, &format!("{k}:{}", ex.id));
    match kind {
        ProbeKind::RowPermute | ProbeKind::ColPermute => {
            let axis = if kind == ProbeKind::RowPermute { Axis::Rows } else { Axis::Cols };
            let (pt, perm) = permute(t, axis, key(kind));
            let mut p = PerturbedExample::new(ex, kind, Claim::Preserving).with_table(pt);
            if axis == Axis::Cols {
                // positional column names no longer line up
                p.example.gold_sql = None;
            }
            p.permutation = Some(perm);
            Ok(p)
        }
        ProbeKind::SchemaRename => {
            let pt = rename_schema(t, &RenameMode::Generic)?;
            Ok(PerturbedExample::new(ex, kind, Claim::Preserving).with_table(pt))
        }
        ProbeKind::CounterfactualSwap => counterfactual_swap(ex, t, seed),
        ProbeKind::EntitySwap => entity_swap(ex, t),
        ProbeKind::Paraphrase => paraphrase(ex, templates),
        ProbeKind::Canary => inject_canary(ex, t, canary, seed),
        ProbeKind::NgramOverlap => Err(ProbeError::NotATransform(kind)),
    }
}

fn ngram_tokens(text: &str) -> Vec<String> {
    normalize_text(text, &GroundingConfig::default())
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Token n-grams of a reference corpus.
#[derive(Debug, Clone, Default)]
pub struct NgramIndex {
    n: usize,
    grams: HashSet<Vec<String>>,
}

impl NgramIndex {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "n-gram order must be at least 1");
        NgramIndex {
            n,
            grams: HashSet::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, text: &str) {
        let toks = ngram_tokens(text);
        for w in toks.windows(self.n) {
            self.grams.insert(w.to_vec());
        }
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }
}

/// Fraction of the text's n-grams found in the index; 0 when the text has
/// fewer than n tokens.
pub fn ngram_overlap(text: &str, index: &NgramIndex) -> f64 {
    let toks = ngram_tokens(text);
    if toks.len() < index.n {
        return 0.0;
    }
    let windows = toks.windows(index.n);
    let total = windows.len();
    let hit = toks
        .windows(index.n)
        .filter(|w| index.grams.contains(*w))
        .count();
    hit as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub n: usize,
    pub before: MetricBlock,
    pub after: MetricBlock,
    /// after - before, per metric.
    pub delta: BTreeMap<String, f64>,
}

/// Metric differences between two blocks computed on the same example ids.
pub fn probe_delta(
    before_ids: &BTreeSet<String>,
    before: &MetricBlock,
    after_ids: &BTreeSet<String>,
    after: &MetricBlock,
) -> Result<DeltaReport, ProbeError> {
    if let Some(id) = before_ids.symmetric_difference(after_ids).next() {
        return Err(ProbeError::IdMismatch(id.clone()));
    }
    let delta = ["em", "f1"]
        .iter()
        .map(|m| (m.to_string(), after.get(m).unwrap() - before.get(m).unwrap()))
        .collect();
    Ok(DeltaReport {
        n: before_ids.len(),
        before: *before,
        after: *after,
        delta,
    })
}
