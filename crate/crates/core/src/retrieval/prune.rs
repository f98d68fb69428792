use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{cmp_desc_then_index, Ranking};
use crate::evidence::EvidenceSet;
use crate::serialization::markdown_line;
use crate::table::{count_tokens, jaccard, token_set, truncate_tokens, Table, TokenBudget};

/// A budgeted view of a table: rows chosen by rank, columns capped by
/// question overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunedContext {
    /// Kept rows in rank order.
    pub rows: Vec<usize>,
    /// Kept columns in table order.
    pub cols: Vec<usize>,
    /// Budget tokens of the kept rows' full-width markdown lines.
    pub row_tokens: usize,
    /// The first-ranked row alone exceeded the budget and was kept anyway.
    pub oversize: bool,
    /// Evidence rows that made it into the context, when evidence was given.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub evidence_survived: Option<BTreeSet<usize>>,
    /// Markdown serialization of the pruned table; an oversize row is cut to
    /// the budget.
    pub context: String,
}

impl PrunedContext {
    pub fn survived(&self) -> BTreeSet<usize> {
        self.rows.iter().copied().collect()
    }
}

/// Greedily add rows in rank order while the running token count of their
/// markdown lines stays within budget (always at least one row), then keep
/// the `max_cols` columns with the highest question overlap.
pub fn budget_prune(
    t: &Table,
    rank: &Ranking,
    question: &str,
    budget: &TokenBudget,
    evidence: Option<&EvidenceSet>,
) -> PrunedContext {
    let mut rows = Vec::new();
    let mut used = 0;
    let mut oversize = false;
    for &r in &rank.order {
        if r >= t.n_rows() {
            continue;
        }
        let cost = count_tokens(&markdown_line(&t.rows()[r]));
        if used + cost <= budget.max_table_tokens {
            rows.push(r);
            used += cost;
        } else {
            if rows.is_empty() {
                rows.push(r);
                used = cost;
                oversize = true;
            }
            break;
        }
    }

    let cols = select_columns(t, &rows, question, budget.max_cols);
    let context = render(t, &rows, &cols, oversize.then_some(budget.max_table_tokens));
    let evidence_survived = evidence.map(|e| {
        let kept: BTreeSet<usize> = rows.iter().copied().collect();
        e.rows.intersection(&kept).copied().collect()
    });
    PrunedContext {
        rows,
        cols,
        row_tokens: used,
        oversize,
        evidence_survived,
        context,
    }
}

fn select_columns(t: &Table, rows: &[usize], question: &str, max_cols: usize) -> Vec<usize> {
    if t.n_cols() <= max_cols {
        return (0..t.n_cols()).collect();
    }
    let q = token_set(question);
    let mut scored: Vec<(usize, f64)> = (0..t.n_cols())
        .map(|c| {
            let mut toks: HashSet<String> = token_set(&t.headers()[c]);
            for &r in rows {
                toks.extend(token_set(&t.rows()[r][c]));
            }
            (c, jaccard(&q, &toks))
        })
        .collect();
    scored.sort_by(|a, b| cmp_desc_then_index(*a, *b));
    let mut keep: Vec<usize> = scored[..max_cols].iter().map(|x| x.0).collect();
    keep.sort_unstable();
    keep
}

fn render(t: &Table, rows: &[usize], cols: &[usize], cut: Option<usize>) -> String {
    let pick = |cells: &[String]| -> Vec<String> { cols.iter().map(|&c| cells[c].clone()).collect() };
    let mut out = markdown_line(&pick(t.headers()));
    out.push('\n');
    out.push_str(&markdown_line(&vec!["---".to_owned(); cols.len()]));
    out.push('\n');
    for &r in rows {
        let line = markdown_line(&pick(&t.rows()[r]));
        match cut {
            Some(max) => out.push_str(truncate_tokens(&line, max)),
            None => out.push_str(&line),
        }
        out.push('\n');
    }
    out
}
