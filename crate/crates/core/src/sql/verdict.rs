//! Denotation comparison, mismatch categories and the SQL-target accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::engine::ExecStatus;
use crate::table::{normalize, values_match, GroundingConfig, MultivaluePolicy, NormalizedValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchCategory {
    Exact,
    NormalizationFormat,
    MultiValue,
    EmptySql,
    Other,
}

impl MismatchCategory {
    pub const MISMATCHES: [MismatchCategory; 4] = [
        MismatchCategory::NormalizationFormat,
        MismatchCategory::Other,
        MismatchCategory::MultiValue,
        MismatchCategory::EmptySql,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MismatchCategory::Exact => "exact",
            MismatchCategory::NormalizationFormat => "normalization_format",
            MismatchCategory::MultiValue => "multi_value",
            MismatchCategory::EmptySql => "empty_sql",
            MismatchCategory::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchVerdict {
    pub exact: bool,
    pub soft: bool,
    pub category: MismatchCategory,
}

fn any_pair(a: &[NormalizedValue], b: &[NormalizedValue], cfg: &GroundingConfig) -> bool {
    a.iter().any(|x| b.iter().any(|y| values_match(x, y, cfg)))
}

fn covers(a: &[NormalizedValue], b: &[NormalizedValue], cfg: &GroundingConfig) -> bool {
    a.iter().all(|x| b.iter().any(|y| values_match(x, y, cfg)))
}

/// Soft agreement between two value lists under the configured policy.
/// `all-elements` requires every value on each side to match one on the other.
pub fn lists_match(a: &[NormalizedValue], b: &[NormalizedValue], cfg: &GroundingConfig) -> bool {
    match cfg.multivalue_policy {
        MultivaluePolicy::AnyElement => any_pair(a, b, cfg),
        MultivaluePolicy::AllElements => {
            !a.is_empty() && !b.is_empty() && covers(a, b, cfg) && covers(b, a, cfg)
        }
    }
}

fn exact_multiset(a: &[String], b: &[String]) -> bool {
    let mut x: Vec<&str> = a.iter().map(|s| s.trim()).collect();
    let mut y: Vec<&str> = b.iter().map(|s| s.trim()).collect();
    x.sort_unstable();
    y.sort_unstable();
    x == y
}

/// Compare an executed denotation with gold answers.
///
/// Category precedence: exact, then empty_sql, multi_value (lengths differ
/// but some pair matches), normalization_format (soft match, equal lengths),
/// other.
pub fn compare_denotation(oracle: &[String], gold: &[String], cfg: &GroundingConfig) -> MatchVerdict {
    let exact = exact_multiset(oracle, gold);
    let o: Vec<NormalizedValue> = oracle.iter().map(|s| normalize(s, cfg)).collect();
    let g: Vec<NormalizedValue> = gold.iter().map(|s| normalize(s, cfg)).collect();
    let soft = exact || lists_match(&o, &g, cfg);
    let category = if exact {
        MismatchCategory::Exact
    } else if oracle.iter().all(|s| s.trim().is_empty()) {
        MismatchCategory::EmptySql
    } else if oracle.len() != gold.len() && any_pair(&o, &g, cfg) {
        MismatchCategory::MultiValue
    } else if soft && oracle.len() == gold.len() {
        MismatchCategory::NormalizationFormat
    } else {
        MismatchCategory::Other
    };
    MatchVerdict {
        exact,
        soft,
        category,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSetting {
    pub name: String,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl ToleranceSetting {
    fn new(name: &str, abs_tol: f64, rel_tol: f64) -> Self {
        ToleranceSetting {
            name: name.to_owned(),
            abs_tol,
            rel_tol,
        }
    }

    /// strict 1e-6 / 0%, default 1e-3 / 1%, loose 1e-2 / 5%.
    pub fn standard() -> Vec<ToleranceSetting> {
        vec![
            ToleranceSetting::new("strict", 1e-6, 0.0),
            ToleranceSetting::new("default", 1e-3, 0.01),
            ToleranceSetting::new("loose", 1e-2, 0.05),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceRate {
    pub name: String,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub resolved: usize,
    pub total: usize,
    pub rate: Option<f64>,
}

/// Fraction of exact mismatches (oracle, gold) resolved by soft matching
/// under each tolerance setting; other grounding settings come from `base`.
pub fn tolerance_ablation(
    pairs: &[(Vec<String>, Vec<String>)],
    settings: &[ToleranceSetting],
    base: &GroundingConfig,
) -> Vec<ToleranceRate> {
    settings
        .iter()
        .map(|s| {
            let cfg = base.with_tolerance(s.abs_tol, s.rel_tol);
            let resolved = pairs
                .iter()
                .filter(|(o, g)| compare_denotation(o, g, &cfg).soft)
                .count();
            ToleranceRate {
                name: s.name.clone(),
                abs_tol: s.abs_tol,
                rel_tol: s.rel_tol,
                resolved,
                total: pairs.len(),
                rate: ratio(resolved, pairs.len()),
            }
        })
        .collect()
}

fn ratio(n: usize, d: usize) -> Option<f64> {
    (d > 0).then(|| n as f64 / d as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryShare {
    pub count: usize,
    pub share: Option<f64>,
}

/// SQL-target accounting: execution, exact and soft agreement of executed
/// gold SQL with the gold answers, and the mismatch breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountingReport {
    pub total: usize,
    pub sql_executable: usize,
    pub execution_rate: Option<f64>,
    pub exact_match: usize,
    pub exact_rate: Option<f64>,
    pub mismatches: usize,
    pub mismatch_rate: Option<f64>,
    pub soft_resolved: usize,
    /// Soft-resolved share of the mismatches; null when there are none.
    pub soft_resolved_rate: Option<f64>,
    /// Exact or soft agreement among executable queries.
    pub soft_match: usize,
    pub soft_match_rate: Option<f64>,
    pub mismatch_categories: BTreeMap<MismatchCategory, CategoryShare>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    pub status: ExecStatus,
    pub verdict: Option<MatchVerdict>,
}

pub fn accounting(results: &[OracleOutcome]) -> AccountingReport {
    let total = results.len();
    let executable: Vec<&MatchVerdict> = results
        .iter()
        .filter(|r| r.status == ExecStatus::Ok)
        .filter_map(|r| r.verdict.as_ref())
        .collect();
    let sql_executable = executable.len();
    let exact_match = executable.iter().filter(|v| v.exact).count();
    let mismatches = sql_executable - exact_match;
    let soft_resolved = executable.iter().filter(|v| !v.exact && v.soft).count();
    let mut mismatch_categories = BTreeMap::new();
    for cat in MismatchCategory::MISMATCHES {
        let count = executable.iter().filter(|v| v.category == cat).count();
        mismatch_categories.insert(
            cat,
            CategoryShare {
                count,
                share: ratio(count, mismatches),
            },
        );
    }
    AccountingReport {
        total,
        sql_executable,
        execution_rate: ratio(sql_executable, total),
        exact_match,
        exact_rate: ratio(exact_match, sql_executable),
        mismatches,
        mismatch_rate: ratio(mismatches, sql_executable),
        soft_resolved,
        soft_resolved_rate: ratio(soft_resolved, mismatches),
        soft_match: exact_match + soft_resolved,
        soft_match_rate: ratio(exact_match + soft_resolved, sql_executable),
        mismatch_categories,
    }
}
