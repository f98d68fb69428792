//! Rule-ordered error labels with a replayable trace.

use std::cell::OnceCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sql::ExecStatus;
use crate::table::{normalize, table_contains, values_match, GroundingConfig, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorLabel {
    #[serde(rename = "OK")]
    Ok,
    L0,
    #[serde(rename = "L0_5")]
    L0_5,
    L1,
    L2,
    L3,
    L4,
}

impl ErrorLabel {
    pub const ALL: [ErrorLabel; 7] = [
        ErrorLabel::Ok,
        ErrorLabel::L0,
        ErrorLabel::L0_5,
        ErrorLabel::L1,
        ErrorLabel::L2,
        ErrorLabel::L3,
        ErrorLabel::L4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorLabel::Ok => "OK",
            ErrorLabel::L0 => "L0",
            ErrorLabel::L0_5 => "L0_5",
            ErrorLabel::L1 => "L1",
            ErrorLabel::L2 => "L2",
            ErrorLabel::L3 => "L3",
            ErrorLabel::L4 => "L4",
        }
    }
}

impl fmt::Display for ErrorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleSource {
    Sql,
    GoldAnswer,
}

/// Rules in evaluation order with the label each one assigns.
pub const RULES: [(&str, ErrorLabel); 8] = [
    ("exec_error", ErrorLabel::L1),
    ("ok_match", ErrorLabel::Ok),
    ("empty_pred", ErrorLabel::L0),
    ("context_miss", ErrorLabel::L0_5),
    ("hallucination", ErrorLabel::L2),
    ("grounding", ErrorLabel::L3),
    ("calculation", ErrorLabel::L4),
    // prediction is a cell, gold is not: binned with L4 and kept separable
    ("pred_grounded_gold_not", ErrorLabel::L4),
];

#[derive(Debug, Error, PartialEq)]
pub enum AttributionError {
    #[error("oracle is empty and SQL did not fail")]
    MissingOracle,
    #[error("malformed rule trace: {0}")]
    BadTrace(String),
    #[error("a sweep needs at least two configurations")]
    TooFewConfigs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub id: String,
    pub label: ErrorLabel,
    pub rule_trace: Vec<String>,
    pub oracle_source: OracleSource,
}

#[derive(Debug, Clone, Copy)]
pub struct RetrievalInfo<'a> {
    pub evidence: &'a BTreeSet<usize>,
    pub survived: &'a BTreeSet<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct AttributionCase<'a> {
    pub id: &'a str,
    pub pred: &'a str,
    pub oracle: &'a [String],
    pub table: &'a Table,
    pub retrieval: Option<RetrievalInfo<'a>>,
    pub sql_status: Option<ExecStatus>,
    pub oracle_source: OracleSource,
}

/// Evaluate the rules in order; the first that fires sets the label.
pub fn attribute(case: &AttributionCase<'_>, cfg: &GroundingConfig) -> Result<AttributionRecord, AttributionError> {
    let exec_error = case.sql_status == Some(ExecStatus::ExecError);
    if case.oracle.is_empty() && !exec_error {
        return Err(AttributionError::MissingOracle);
    }
    let pred = normalize(case.pred, cfg);
    let pred_grounded = OnceCell::new();
    let gold_grounded = OnceCell::new();
    let pred_in = || *pred_grounded.get_or_init(|| table_contains(case.table, &pred, cfg));
    let gold_in = || {
        *gold_grounded.get_or_init(|| {
            case.oracle
                .iter()
                .any(|o| table_contains(case.table, &normalize(o, cfg), cfg))
        })
    };
    let fires = |rule: usize| match rule {
        0 => exec_error,
        1 => case
            .oracle
            .iter()
            .any(|o| values_match(&pred, &normalize(o, cfg), cfg)),
        2 => case.pred.trim().is_empty(),
        3 => case
            .retrieval
            .is_some_and(|r| !r.evidence.is_empty() && r.evidence.is_disjoint(r.survived)),
        4 => gold_in() && !pred_in(),
        5 => pred_in() && gold_in(),
        6 => !pred_in() && !gold_in(),
        _ => pred_in() && !gold_in(),
    };

    let mut trace = Vec::new();
    for (i, (name, label)) in RULES.iter().enumerate() {
        if fires(i) {
            trace.push(format!("{name}=fired"));
            return Ok(AttributionRecord {
                id: case.id.to_owned(),
                label: *label,
                rule_trace: trace,
                oracle_source: case.oracle_source,
            });
        }
        trace.push(format!("{name}=skipped"));
    }
    unreachable!("rules 5-8 cover every grounding combination")
}

/// Recover the label from a rule trace.
pub fn replay(trace: &[String]) -> Result<ErrorLabel, AttributionError> {
    let bad = || AttributionError::BadTrace(trace.join(","));
    if trace.is_empty() || trace.len() > RULES.len() {
        return Err(bad());
    }
    for (i, entry) in trace.iter().enumerate() {
        let (name, state) = entry.split_once('=').ok_or_else(bad)?;
        if RULES.get(i).map(|r| r.0) != Some(name) {
            return Err(bad());
        }
        let expect = if i + 1 == trace.len() { "fired" } else { "skipped" };
        if state != expect {
            return Err(bad());
        }
    }
    Ok(RULES[trace.len() - 1].1)
}

/// Label shares over every label, zeros included. `restrict` keeps only the
/// listed ids.
pub fn attribution_distribution(
    records: &[AttributionRecord],
    restrict: Option<&BTreeSet<String>>,
) -> BTreeMap<ErrorLabel, f64> {
    let kept: Vec<&AttributionRecord> = records
        .iter()
        .filter(|r| restrict.is_none_or(|s| s.contains(&r.id)))
        .collect();
    let n = kept.len();
    ErrorLabel::ALL
        .iter()
        .map(|&l| {
            let c = kept.iter().filter(|r| r.label == l).count();
            (l, if n == 0 { 0.0 } else { c as f64 / n as f64 })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub name: String,
    pub config: GroundingConfig,
    pub distribution: BTreeMap<ErrorLabel, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub configs: Vec<SweepEntry>,
    /// Per label: [min, max] share across configurations.
    pub band: BTreeMap<ErrorLabel, [f64; 2]>,
}

pub fn sensitivity_sweep(
    cases: &[AttributionCase<'_>],
    configs: &[(String, GroundingConfig)],
) -> Result<SweepReport, AttributionError> {
    if configs.len() < 2 {
        return Err(AttributionError::TooFewConfigs);
    }
    let mut entries = Vec::new();
    for (name, cfg) in configs {
        let recs = cases
            .iter()
            .map(|c| attribute(c, cfg))
            .collect::<Result<Vec<_>, _>>()?;
        entries.push(SweepEntry {
            name: name.clone(),
            config: *cfg,
            distribution: attribution_distribution(&recs, None),
        });
    }
    let band = ErrorLabel::ALL
        .iter()
        .map(|&l| {
            let vals = entries.iter().map(|e| e.distribution[&l]);
            let lo = vals.clone().fold(f64::INFINITY, f64::min);
            let hi = vals.fold(f64::NEG_INFINITY, f64::max);
            (l, [lo, hi])
        })
        .collect();
    Ok(SweepReport {
        configs: entries,
        band,
    })
}

/// The four standard sweep settings: substring on/off crossed with the
/// any/all multi-value policies.
pub fn standard_sweep_configs(base: &GroundingConfig) -> Vec<(String, GroundingConfig)> {
    use crate::table::MultivaluePolicy::*;
    let mut out = Vec::new();
    for sub in [true, false] {
        for pol in [AnyElement, AllElements] {
            let name = format!(
                "substring_{}_{}",
                if sub { "on" } else { "off" },
                if pol == AnyElement { "any" } else { "all" }
            );
            out.push((name, base.with_substring(sub).with_multivalue(pol)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cities() -> Table {
        Table::new(
            "t",
            vec!["city".into(), "pop".into()],
            vec![vec!["paris".into(), "2".into()], vec!["lyon".into(), "0.5".into()]],
        )
        .unwrap()
    }

    fn case<'a>(pred: &'a str, oracle: &'a [String], t: &'a Table) -> AttributionCase<'a> {
        AttributionCase {
            id: "e",
            pred,
            oracle,
            table: t,
            retrieval: None,
            sql_status: None,
            oracle_source: OracleSource::GoldAnswer,
        }
    }

    fn label(pred: &str, gold: &str) -> ErrorLabel {
        let t = cities();
        let g = vec![gold.to_string()];
        attribute(&case(pred, &g, &t), &GroundingConfig::default()).unwrap().label
    }

    #[test]
    fn spec_examples() {
        assert_eq!(label("", "paris"), ErrorLabel::L0);
        assert_eq!(label("london", "paris"), ErrorLabel::L2);
        assert_eq!(label("lyon", "paris"), ErrorLabel::L3);
        assert_eq!(label("Paris.", "paris"), ErrorLabel::Ok);
        assert_eq!(label("7", "12"), ErrorLabel::L4);
        assert_eq!(label("lyon", "12"), ErrorLabel::L4);
    }

    #[test]
    fn trace_and_replay() {
        let t = cities();
        let g = vec!["paris".to_string()];
        let r = attribute(&case("lyon", &g, &t), &GroundingConfig::default()).unwrap();
        assert_eq!(
            r.rule_trace,
            [
                "exec_error=skipped",
                "ok_match=skipped",
                "empty_pred=skipped",
                "context_miss=skipped",
                "hallucination=skipped",
                "grounding=fired"
            ]
        );
        assert_eq!(replay(&r.rule_trace), Ok(ErrorLabel::L3));
        assert!(replay(&["grounding=fired".to_string()]).is_err());
        assert!(replay(&[]).is_err());
    }

    #[test]
    fn exec_error_and_context_miss() {
        let t = cities();
        let mut c = case("x", &[], &t);
        c.sql_status = Some(ExecStatus::ExecError);
        assert_eq!(attribute(&c, &GroundingConfig::default()).unwrap().label, ErrorLabel::L1);
        c.sql_status = Some(ExecStatus::Ok);
        assert_eq!(attribute(&c, &GroundingConfig::default()), Err(AttributionError::MissingOracle));

        let g = vec!["paris".to_string()];
        let ev: BTreeSet<usize> = [0].into();
        let sv: BTreeSet<usize> = [1].into();
        let mut c = case("lyon", &g, &t);
        c.retrieval = Some(RetrievalInfo { evidence: &ev, survived: &sv });
        assert_eq!(attribute(&c, &GroundingConfig::default()).unwrap().label, ErrorLabel::L0_5);
    }

    #[test]
    fn substring_flip() {
        let t = cities();
        let g = vec!["paris".to_string()];
        let c = case("lyo", &g, &t);
        let on = GroundingConfig::default();
        assert_eq!(attribute(&c, &on).unwrap().label, ErrorLabel::L3);
        assert_eq!(attribute(&c, &on.with_substring(false)).unwrap().label, ErrorLabel::L2);
    }

    #[test]
    fn distributions_and_sweep() {
        let t = cities();
        let g = vec!["paris".to_string()];
        let cases = [case("paris", &g, &t), case("lyo", &g, &t)];
        let cfgs = standard_sweep_configs(&GroundingConfig::default());
        let rep = sensitivity_sweep(&cases, &cfgs).unwrap();
        assert_eq!(rep.configs.len(), 4);
        assert_eq!(rep.band[&ErrorLabel::Ok], [0.5, 0.5]);
        assert_eq!(rep.band[&ErrorLabel::L3], [0.0, 0.5]);
        let dup = vec![cfgs[0].clone(), cfgs[0].clone()];
        let rep = sensitivity_sweep(&cases, &dup).unwrap();
        assert!(rep.band.values().all(|b| b[0] == b[1]));
        assert_eq!(sensitivity_sweep(&cases, &cfgs[..1]), Err(AttributionError::TooFewConfigs));
    }
}
