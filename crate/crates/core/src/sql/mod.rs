//! SQL subset: parsing, simple-query classification, engine execution and
//! denotation comparison.

pub mod ast;
pub mod engine;
pub mod eval;
mod lexer;
mod parser;
pub mod verdict;

use thiserror::Error;

pub use ast::{QueryKind, Select, SelectList, SqlQuery, ValueExpr};
pub use engine::{build_database, execute_gold, ExecStatus, OracleResult, DEFAULT_TABLE_NAME};
pub use parser::parse_sql;
pub use verdict::{
    accounting, compare_denotation, tolerance_ablation, AccountingReport, MatchVerdict,
    MismatchCategory, OracleOutcome, ToleranceSetting,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SqlError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown column {0}")]
    UnknownColumn(String),
}

impl SqlError {
    pub(crate) fn syntax(offset: usize, message: impl Into<String>) -> Self {
        SqlError::Syntax {
            offset,
            message: message.into(),
        }
    }
}

/// Plain columns or star, no grouping, one table, fully parsed.
/// ORDER BY and LIMIT are allowed.
pub fn classify_simple(q: &SqlQuery) -> bool {
    let Some(s) = q.select() else {
        return false;
    };
    let plain = match &s.items {
        SelectList::Star => true,
        SelectList::Items(items) => items
            .iter()
            .all(|it| matches!(it.expr, ValueExpr::Column(_))),
    };
    plain && s.group_by.is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_classification() {
        let simple = |s: &str| classify_simple(&parse_sql(s).unwrap());
        assert!(simple("SELECT c1 FROM w WHERE c2 > 3"));
        assert!(simple("SELECT * FROM w ORDER BY c1 LIMIT 2"));
        assert!(!simple("SELECT COUNT(*) FROM w"));
        assert!(!simple("SELECT c1 FROM w GROUP BY c1"));
        assert!(!simple("SELECT c1 FROM w JOIN v ON w.c1 = v.c1"));
    }
}
