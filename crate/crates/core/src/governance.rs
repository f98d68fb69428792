//! Labeling-function governance and LF-triggered contrast sets.

use std::collections::{BTreeMap, BTreeSet};

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::example::{Example, VerdictLabel};
use crate::table::Table;

pub const DIAGNOSTIC_COVERAGE: f64 = 0.25;
pub const SEED_CATALOG: &str = include_str!("../data/lf_catalog.jsonl");
pub const BIAS_STRIP_WORDS: [&str; 4] = ["not", "all", "most", "none"];
pub const COMPARATOR_PAIRS: [(&str, &str); 4] = [
    ("more", "less"),
    ("higher", "lower"),
    ("greater", "smaller"),
    ("most", "least"),
];

#[derive(Debug, Error, PartialEq)]
pub enum GovernanceError {
    #[error("labeling function {name}: bad pattern: {reason}")]
    BadPattern { name: String, reason: String },
    #[error("labeling function catalog line {line}: {reason}")]
    BadCatalog { line: usize, reason: String },
    #[error("no labeling functions")]
    Empty,
    #[error("prediction ids differ: {0}")]
    IdMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Statement,
    Table,
    Both,
}

/// A label or an explicit abstention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    Entailed,
    Refuted,
    Nei,
    Abstain,
}

impl Emit {
    fn label(self) -> Option<VerdictLabel> {
        match self {
            Emit::Entailed => Some(VerdictLabel::Entailed),
            Emit::Refuted => Some(VerdictLabel::Refuted),
            Emit::Nei => Some(VerdictLabel::Nei),
            Emit::Abstain => None,
        }
    }
}

/// Catalog line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfSpec {
    pub name: String,
    pub pattern: String,
    pub emit: Emit,
    pub scope: Scope,
}

/// Anything that votes on an example. Regex rules are the only built-in
/// implementation.
pub trait Labeler: Send + Sync {
    fn name(&self) -> &str;
    fn vote(&self, ex: &Example, table: &Table) -> Option<VerdictLabel>;
}

#[derive(Debug, Clone)]
pub struct RegexLf {
    spec: LfSpec,
    re: Regex,
}

impl RegexLf {
    pub fn new(spec: LfSpec) -> Result<Self, GovernanceError> {
        let re = Regex::new(&spec.pattern).map_err(|e| GovernanceError::BadPattern {
            name: spec.name.clone(),
            reason: e.to_string(),
        })?;
        Ok(RegexLf { spec, re })
    }

    pub fn spec(&self) -> &LfSpec {
        &self.spec
    }
}

fn table_text(t: &Table) -> String {
    let mut parts: Vec<&str> = t.headers().iter().map(String::as_str).collect();
    parts.extend(t.cells());
    parts.join(" | ")
}

impl Labeler for RegexLf {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn vote(&self, ex: &Example, table: &Table) -> Option<VerdictLabel> {
        let hit = match self.spec.scope {
            Scope::Statement => self.re.is_match(&ex.question),
            Scope::Table => self.re.is_match(&table_text(table)),
            Scope::Both => self.re.is_match(&ex.question) || self.re.is_match(&table_text(table)),
        };
        if hit {
            self.spec.emit.label()
        } else {
            None
        }
    }
}

/// Parse and compile a JSONL catalog.
pub fn load_catalog(text: &str) -> Result<Vec<RegexLf>, GovernanceError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let spec: LfSpec = serde_json::from_str(line).map_err(|e| GovernanceError::BadCatalog {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(RegexLf::new(spec)?);
    }
    if out.is_empty() {
        return Err(GovernanceError::Empty);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMatrix {
    pub example_ids: Vec<String>,
    pub lf_names: Vec<String>,
    /// `votes[i][j]`: vote of LF `j` on example `i`; `None` abstains.
    pub votes: Vec<Vec<Option<VerdictLabel>>>,
}

pub fn apply_lfs(
    lfs: &[&dyn Labeler],
    examples: &[(&Example, &Table)],
) -> Result<LabelMatrix, GovernanceError> {
    if lfs.is_empty() {
        return Err(GovernanceError::Empty);
    }
    Ok(LabelMatrix {
        example_ids: examples.iter().map(|(e, _)| e.id.clone()).collect(),
        lf_names: lfs.iter().map(|l| l.name().to_owned()).collect(),
        votes: examples
            .iter()
            .map(|(e, t)| lfs.iter().map(|l| l.vote(e, t)).collect())
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfStats {
    pub coverage: f64,
    pub votes: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernanceReport {
    pub n_examples: usize,
    pub n_lfs: usize,
    pub coverage: f64,
    /// Share of covered examples with two or more distinct labels.
    pub conflict_rate: Option<f64>,
    pub abstention_rate: f64,
    /// Pooled agreement of all non-abstain votes with gold.
    pub lf_accuracy: Option<f64>,
    pub per_lf: BTreeMap<String, LfStats>,
    /// Coverage below 0.25: report as a governance signal only.
    pub diagnostic_only: bool,
}

/// Coverage, conflict, abstention and accuracy of a label matrix against
/// gold labels aligned with its rows.
pub fn governance_report(m: &LabelMatrix, gold: &[Option<VerdictLabel>]) -> GovernanceReport {
    let n = m.votes.len();
    let mut covered = 0usize;
    let mut conflicted = 0usize;
    for row in &m.votes {
        let labels: BTreeSet<VerdictLabel> = row.iter().flatten().copied().collect();
        if !labels.is_empty() {
            covered += 1;
        }
        if labels.len() >= 2 {
            conflicted += 1;
        }
    }
    let coverage = if n == 0 { 0.0 } else { covered as f64 / n as f64 };
    let mut per_lf = BTreeMap::new();
    let (mut all_votes, mut all_correct) = (0usize, 0usize);
    for (j, name) in m.lf_names.iter().enumerate() {
        let (mut votes, mut correct) = (0usize, 0usize);
        for (row, g) in m.votes.iter().zip(gold) {
            if let Some(v) = row[j] {
                votes += 1;
                correct += usize::from(Some(v) == *g);
            }
        }
        all_votes += votes;
        all_correct += correct;
        per_lf.insert(
            name.clone(),
            LfStats {
                coverage: if n == 0 { 0.0 } else { votes as f64 / n as f64 },
                votes,
                correct,
                accuracy: (votes > 0).then(|| correct as f64 / votes as f64),
            },
        );
    }
    GovernanceReport {
        n_examples: n,
        n_lfs: m.lf_names.len(),
        coverage,
        conflict_rate: (covered > 0).then(|| conflicted as f64 / covered as f64),
        abstention_rate: 1.0 - coverage,
        lf_accuracy: (all_votes > 0).then(|| all_correct as f64 / all_votes as f64),
        per_lf,
        diagnostic_only: coverage < DIAGNOSTIC_COVERAGE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastKind {
    BiasStrip,
    ComparatorSwap,
}

impl ContrastKind {
    pub fn name(self) -> &'static str {
        match self {
            ContrastKind::BiasStrip => "bias_strip",
            ContrastKind::ComparatorSwap => "comparator_swap",
        }
    }
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Remove the whole-word bias words, case-insensitively.
pub fn bias_strip(s: &str) -> String {
    let re = Regex::new(&format!(r"(?i)\b(?:{})\b", BIAS_STRIP_WORDS.join("|"))).expect("static pattern");
    if !re.is_match(s) {
        return s.to_owned();
    }
    collapse(&re.replace_all(s, ""))
}

fn match_case(template: &str, word: &str) -> String {
    if template.chars().all(|c| c.is_uppercase()) {
        word.to_uppercase()
    } else if template.chars().next().is_some_and(char::is_uppercase) {
        let mut c = word.chars();
        c.next()
            .map(|f| f.to_uppercase().chain(c).collect())
            .unwrap_or_default()
    } else {
        word.to_owned()
    }
}

/// Exchange each comparator with its partner in one pass.
pub fn comparator_swap(s: &str) -> String {
    let words: Vec<&str> = COMPARATOR_PAIRS.iter().flat_map(|(a, b)| [*a, *b]).collect();
    let re = Regex::new(&format!(r"(?i)\b(?:{})\b", words.join("|"))).expect("static pattern");
    re.replace_all(s, |c: &Captures<'_>| {
        let w = &c[0];
        let lower = w.to_lowercase();
        let partner = COMPARATOR_PAIRS
            .iter()
            .find_map(|(a, b)| {
                if lower == *a {
                    Some(*b)
                } else if lower == *b {
                    Some(*a)
                } else {
                    None
                }
            })
            .expect("matched a comparator");
        match_case(w, partner)
    })
    .into_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastExample {
    pub source_id: String,
    pub kind: ContrastKind,
    pub example: Example,
    pub triggered: bool,
}

pub fn contrast_set(examples: &[Example], kind: ContrastKind) -> Vec<ContrastExample> {
    examples
        .iter()
        .map(|ex| {
            let q = match kind {
                ContrastKind::BiasStrip => bias_strip(&ex.question),
                ContrastKind::ComparatorSwap => comparator_swap(&ex.question),
            };
            let mut e = ex.clone();
            e.id = format!("{}::{}", ex.id, kind.name());
            let triggered = q != ex.question;
            e.question = q;
            ContrastExample {
                source_id: ex.id.clone(),
                kind,
                example: e,
                triggered,
            }
        })
        .collect()
}

/// Share of triggered ids whose predicted label changed; `None` when nothing
/// was triggered.
pub fn flip_rate(
    before: &BTreeMap<String, String>,
    after: &BTreeMap<String, String>,
    triggered: &BTreeSet<String>,
) -> Result<Option<f64>, GovernanceError> {
    if let Some(id) = before
        .keys()
        .find(|k| !after.contains_key(*k))
        .or_else(|| after.keys().find(|k| !before.contains_key(*k)))
        .or_else(|| triggered.iter().find(|k| !before.contains_key(*k)))
    {
        return Err(GovernanceError::IdMismatch(id.clone()));
    }
    if triggered.is_empty() {
        return Ok(None);
    }
    let flipped = triggered.iter().filter(|id| before[*id] != after[*id]).count();
    Ok(Some(flipped as f64 / triggered.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> Table {
        Table::new("t", vec!["a".into()], vec![vec!["x".into()]]).unwrap()
    }

    fn lf(name: &str, pattern: &str, emit: Emit) -> RegexLf {
        RegexLf::new(LfSpec {
            name: name.into(),
            pattern: pattern.into(),
            emit,
            scope: Scope::Statement,
        })
        .unwrap()
    }

    fn stmt(i: usize, q: &str, label: VerdictLabel) -> Example {
        Example::verdict(&format!("e{i}"), q, label, "t")
    }

    #[test]
    fn coverage_and_conflict() {
        let t = table();
        let exs: Vec<Example> = (0..10)
            .map(|i| {
                let q = match i {
                    0 => "alice did not win",
                    1 => "not all players scored",
                    2 => "bob did not lose",
                    _ => "plain statement",
                };
                stmt(i, q, VerdictLabel::Refuted)
            })
            .collect();
        let a = lf("neg", r"\bnot\b", Emit::Refuted);
        let b = lf("all", r"\ball\b", Emit::Entailed);
        let pairs: Vec<(&Example, &Table)> = exs.iter().map(|e| (e, &t)).collect();
        let m = apply_lfs(&[&a, &b], &pairs).unwrap();
        let gold: Vec<Option<VerdictLabel>> = exs.iter().map(|e| e.label).collect();
        let r = governance_report(&m, &gold);
        assert_eq!(r.coverage, 0.3);
        assert_eq!(r.abstention_rate, 0.7);
        assert_eq!(r.coverage + r.abstention_rate, 1.0);
        assert_eq!(r.conflict_rate, Some(1.0 / 3.0));
        assert_eq!(r.per_lf["neg"].accuracy, Some(1.0));
        assert_eq!(r.per_lf["all"].accuracy, Some(0.0));
        assert_eq!(r.lf_accuracy, Some(0.75));
        assert!(!r.diagnostic_only);

        let single = apply_lfs(&[&a], &pairs).unwrap();
        assert_eq!(governance_report(&single, &gold).conflict_rate, Some(0.0));
    }

    #[test]
    fn seed_catalog_loads() {
        let lfs = load_catalog(SEED_CATALOG).unwrap();
        assert!(lfs.len() >= 5);
        let bad = r#"{"name":"x","pattern":"(","emit":"refuted","scope":"statement"}"#;
        assert!(matches!(load_catalog(bad), Err(GovernanceError::BadPattern { .. })));
    }

    #[test]
    fn contrast_examples() {
        assert_eq!(bias_strip("alice did not win"), "alice did win");
        assert_eq!(bias_strip("plain words"), "plain words");
        assert_eq!(comparator_swap("more points than"), "less points than");
        assert_eq!(comparator_swap("Most goals, higher rank"), "Least goals, lower rank");
        let exs = vec![
            stmt(0, "alice did not win", VerdictLabel::Refuted),
            stmt(1, "nothing notable", VerdictLabel::Entailed),
        ];
        let cs = contrast_set(&exs, ContrastKind::BiasStrip);
        assert!(cs[0].triggered && !cs[1].triggered);
        assert_eq!(cs[1].example.question, "nothing notable");
    }

    #[test]
    fn flips() {
        let m = |v: &[&str]| -> BTreeMap<String, String> {
            v.iter().enumerate().map(|(i, l)| (i.to_string(), l.to_string())).collect()
        };
        let all: BTreeSet<String> = ["0", "1", "2"].iter().map(|s| s.to_string()).collect();
        let x = m(&["a", "b", "a"]);
        assert_eq!(flip_rate(&x, &x, &all), Ok(Some(0.0)));
        assert_eq!(flip_rate(&x, &m(&["b", "a", "b"]), &all), Ok(Some(1.0)));
        let r = flip_rate(&x, &m(&["b", "a", "a"]), &all).unwrap().unwrap();
        assert!((r - 0.667).abs() < 1e-3);
        assert!(matches!(flip_rate(&x, &m(&["a"]), &all), Err(GovernanceError::IdMismatch(_))));
    }

    proptest! {
        #[test]
        fn bias_strip_idempotent(s in "(not|all|most|none|alice|won|,| |-){0,12}") {
            let once = bias_strip(&s);
            prop_assert_eq!(bias_strip(&once), once.clone());
        }

        #[test]
        fn coverage_identity_exact(covered in 0usize..500, extra in 0usize..500) {
            let n = covered + extra;
            prop_assume!(n > 0);
            let c = covered as f64 / n as f64;
            prop_assert_eq!(c + (1.0 - c), 1.0);
        }
    }
}
