use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::evidence::{EvidenceMode, DEFAULT_HYBRID_THETA};
use crate::governance::SEED_CATALOG;
use crate::probes::{ProbeKind, DEFAULT_NGRAM_N};
use crate::retrieval::{SparseKind, DEFAULT_KS, DEFAULT_RRF_K};
use crate::rng::sha256_hex;
use crate::table::{GroundingConfig, TokenBudget};

pub const TOOL_VERSION: &str = concat!("glean-core ", env!("CARGO_PKG_VERSION"));

/// A row ranker selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RetrieverSpec {
    Sparse(SparseKind),
    /// Cosine over ingested embeddings.
    Dense,
    /// Reciprocal-rank fusion of BM25 and dense.
    Hybrid,
    /// Oracle ranking with SQL-derived evidence rows first.
    SqlGold,
    /// Per-row scores from an ingested file, e.g. a reranker.
    External,
}

impl RetrieverSpec {
    pub fn name(self) -> &'static str {
        match self {
            RetrieverSpec::Sparse(k) => k.name(),
            RetrieverSpec::Dense => "dense",
            RetrieverSpec::Hybrid => "hybrid",
            RetrieverSpec::SqlGold => "sql_gold",
            RetrieverSpec::External => "external",
        }
    }
}

impl fmt::Display for RetrieverSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RetrieverSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(RetrieverSpec::Dense),
            "hybrid" => Ok(RetrieverSpec::Hybrid),
            "sql_gold" => Ok(RetrieverSpec::SqlGold),
            "external" => Ok(RetrieverSpec::External),
            other => other
                .parse::<SparseKind>()
                .map(RetrieverSpec::Sparse)
                .map_err(|_| format!("unknown retriever {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub probes: bool,
    pub retrieval: bool,
    pub metrics: bool,
    pub evidence: bool,
    pub sql: bool,
    pub attribution: bool,
    pub governance: bool,
}

impl Stages {
    pub const ALL: Stages = Stages {
        probes: true,
        retrieval: true,
        metrics: true,
        evidence: true,
        sql: true,
        attribution: true,
        governance: true,
    };
}

impl Default for Stages {
    fn default() -> Self {
        Stages::ALL
    }
}

/// Everything that determines a run's output bytes, apart from the inputs
/// whose digests it records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub global_seed: u64,
    #[serde(default)]
    pub dataset_tags: Vec<String>,
    pub tool_version: String,
    #[serde(default)]
    pub stages: Stages,
    pub grounding: GroundingConfig,
    pub budget: TokenBudget,
    pub retrievers: Vec<String>,
    /// Ranker whose pruned contexts feed requests and attribution.
    pub primary_retriever: String,
    pub ks: Vec<usize>,
    pub evidence_mode: EvidenceMode,
    pub hybrid_theta: f64,
    pub probe_kinds: Vec<ProbeKind>,
    pub canary: String,
    pub ngram_n: usize,
    pub rrf_k: usize,
    pub bootstrap_resamples: usize,
    pub lf_catalog_hash: String,
    /// Fixed conventions, recorded for readers of the report.
    pub conventions: BTreeMap<String, String>,
    #[serde(default)]
    pub input_digests: BTreeMap<String, String>,
}

fn conventions() -> BTreeMap<String, String> {
    [
        ("token_unit", "whitespace runs with punctuation split out; rows counted on markdown lines"),
        ("em_normalization", "casefold, punctuation strip, article strip (a, an, the)"),
        ("bm25", "k1=1.2 b=0.75 lucene idf; bm25f header weight 0.5, cell weight 1.0"),
        ("simple_sql", "plain columns or star, no grouping; order by and limit allowed"),
        ("attribution_rule_8", "prediction in table, gold not in table -> L4"),
        ("bootstrap", "percentile, 95%, type-7 quantiles"),
        ("column_cap", "question overlap with header and kept cells, lowest index on ties"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), v.to_owned()))
    .collect()
}

impl RunManifest {
    pub fn new(run_id: &str, global_seed: u64) -> Self {
        RunManifest {
            run_id: run_id.to_owned(),
            global_seed,
            dataset_tags: Vec::new(),
            tool_version: TOOL_VERSION.to_owned(),
            stages: Stages::ALL,
            grounding: GroundingConfig::default(),
            budget: TokenBudget::default(),
            retrievers: SparseKind::ALL.iter().map(|k| k.name().to_owned()).collect(),
            primary_retriever: SparseKind::Bm25.name().to_owned(),
            ks: DEFAULT_KS.to_vec(),
            evidence_mode: EvidenceMode::AnswerString,
            hybrid_theta: DEFAULT_HYBRID_THETA,
            probe_kinds: ProbeKind::ALL.to_vec(),
            canary: format!("GLEAN-{:08x}", global_seed as u32),
            ngram_n: DEFAULT_NGRAM_N,
            rrf_k: DEFAULT_RRF_K,
            bootstrap_resamples: crate::metrics::DEFAULT_RESAMPLES,
            lf_catalog_hash: sha256_hex(SEED_CATALOG.as_bytes()),
            conventions: conventions(),
            input_digests: BTreeMap::new(),
        }
    }

    pub fn retriever_specs(&self) -> Result<Vec<RetrieverSpec>, HarnessError> {
        self.retrievers
            .iter()
            .map(|r| r.parse().map_err(HarnessError::Config))
            .collect()
    }

    pub fn primary(&self) -> Result<RetrieverSpec, HarnessError> {
        self.primary_retriever.parse().map_err(HarnessError::Config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg = |e: String| Err(HarnessError::Config(e));
        if let Err(e) = self.grounding.validate() {
            return cfg(e.to_string());
        }
        if let Err(e) = self.budget.validate() {
            return cfg(e.to_string());
        }
        self.retriever_specs()?;
        self.primary()?;
        if !self.retrievers.contains(&self.primary_retriever) {
            return cfg(format!("primary retriever {} is not in retrievers", self.primary_retriever));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return cfg("ks must be nonempty and positive".into());
        }
        if self.ngram_n == 0 {
            return cfg("ngram_n must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.hybrid_theta) {
            return cfg(format!("hybrid_theta must lie in [0, 1], got {}", self.hybrid_theta));
        }
        if self.canary.is_empty() {
            return cfg("canary must be nonempty".into());
        }
        if self.bootstrap_resamples == 0 {
            return cfg("bootstrap_resamples must be positive".into());
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("serializable manifest").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let m = RunManifest::new("r", 1);
        m.validate().unwrap();
        let back: RunManifest = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.digest(), m.digest());
    }

    #[test]
    fn rejects_bad_configs() {
        let mut m = RunManifest::new("r", 1);
        m.primary_retriever = "dense".into();
        assert!(m.validate().is_err());
        let mut m = RunManifest::new("r", 1);
        m.retrievers.push("nope".into());
        assert!(m.validate().is_err());
        let mut m = RunManifest::new("r", 1);
        m.ks = vec![0];
        assert!(m.validate().is_err());
    }

    #[test]
    fn retriever_names() {
        for s in ["bm25", "tfidf", "bm25f", "cell_bm25", "dense", "hybrid", "sql_gold"] {
            assert_eq!(s.parse::<RetrieverSpec>().unwrap().name(), s);
        }
    }
}
