//! Row-level WHERE evaluation for simple queries.
//!
//! Values follow the storage model of a table whose columns `c1..cN` carry
//! NUMERIC affinity and receive every cell as text: cells that read as a
//! well-formed number become integers or reals, everything else stays text.
//! Comparisons use the same rules as the execution engine: a column operand
//! lends its numeric affinity to a literal on the other side, numbers order
//! before text, and text compares bytewise.

use std::cmp::Ordering;

use super::ast::{CmpOp, Expr, Literal, Operand};
use super::SqlError;
use crate::table::Table;

#[derive(Debug, Clone, PartialEq)]
pub enum SqlValue {
    Integer(i64),
    Real(f64),
    Text(String),
}

impl SqlValue {
    fn is_numeric(&self) -> bool {
        !matches!(self, SqlValue::Text(_))
    }

    /// Text rendering used by LIKE and by denotations.
    pub fn to_text(&self) -> String {
        match self {
            SqlValue::Integer(i) => i.to_string(),
            SqlValue::Real(r) => format_real(*r),
            SqlValue::Text(s) => s.clone(),
        }
    }
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | 0x0b | 0x0c | b'\r')
}

/// Numeric reading of a whole string (surrounding whitespace allowed):
/// `Some((value, is_integer_literal))`.
fn read_number(s: &str) -> Option<(f64, bool)> {
    let b = s.as_bytes();
    let mut i = 0;
    while i < b.len() && is_space(b[i]) {
        i += 1;
    }
    let mut end = b.len();
    while end > i && is_space(b[end - 1]) {
        end -= 1;
    }
    let body = &s[i..end];
    let bb = body.as_bytes();
    if bb.is_empty() {
        return None;
    }
    let mut j = 0;
    if bb[0] == b'+' || bb[0] == b'-' {
        j = 1;
    }
    let int_start = j;
    while j < bb.len() && bb[j].is_ascii_digit() {
        j += 1;
    }
    let int_digits = j - int_start;
    let mut frac_digits = 0;
    let mut is_int = true;
    if j < bb.len() && bb[j] == b'.' {
        is_int = false;
        j += 1;
        let fs = j;
        while j < bb.len() && bb[j].is_ascii_digit() {
            j += 1;
        }
        frac_digits = j - fs;
    }
    if int_digits + frac_digits == 0 {
        return None;
    }
    if j < bb.len() && (bb[j] == b'e' || bb[j] == b'E') {
        is_int = false;
        j += 1;
        if j < bb.len() && (bb[j] == b'+' || bb[j] == b'-') {
            j += 1;
        }
        let es = j;
        while j < bb.len() && bb[j].is_ascii_digit() {
            j += 1;
        }
        if j == es {
            return None;
        }
    }
    if j != bb.len() {
        return None;
    }
    let v: f64 = body.parse().ok()?;
    Some((v, is_int))
}

/// Storage class of a text value inserted into a NUMERIC column.
pub fn numeric_affinity(s: &str) -> SqlValue {
    match read_number(s) {
        None => SqlValue::Text(s.to_owned()),
        Some((v, is_int)) => {
            if is_int {
                let t = s.trim_matches(|c: char| c.is_ascii() && is_space(c as u8));
                if let Ok(i) = t.trim_start_matches('+').parse::<i64>() {
                    return SqlValue::Integer(i);
                }
            }
            real_or_integer(v)
        }
    }
}

fn real_or_integer(v: f64) -> SqlValue {
    // integral reals inside the i64 range are stored as integers
    if v.is_finite() && v == v.trunc() && v > -9.223372036854775e18 && v < 9.223372036854775e18 {
        SqlValue::Integer(v as i64)
    } else {
        SqlValue::Real(v)
    }
}

/// Render a real with 15 significant digits, always showing a decimal point
/// or exponent (`3.0`, `0.1`, `1.0e+20`).
pub fn format_real(v: f64) -> String {
    if v.is_nan() {
        return String::new();
    }
    if v.is_infinite() {
        return if v > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if v == 0.0 {
        return "0.0".into();
    }
    let sci = format!("{:.14e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |m: &str| -> String {
        let m = if m.contains('.') {
            m.trim_end_matches('0').trim_end_matches('.')
        } else {
            m
        };
        if m.contains('.') {
            m.to_owned()
        } else {
            format!("{m}.0")
        }
    };
    if !(-4..15).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mantissa), sign, exp.abs())
    } else {
        let decimals = (14 - exp).max(0) as usize;
        trim(&format!("{:.*}", decimals, v))
    }
}

fn compare_values(a: &SqlValue, b: &SqlValue) -> Ordering {
    use SqlValue::*;
    match (a, b) {
        (Integer(x), Integer(y)) => x.cmp(y),
        (Integer(x), Real(y)) => (*x as f64).total_cmp(y),
        (Real(x), Integer(y)) => x.total_cmp(&(*y as f64)),
        (Real(x), Real(y)) => x.partial_cmp(y).unwrap_or(Ordering::Equal),
        (Text(_), Integer(_) | Real(_)) => Ordering::Greater,
        (Integer(_) | Real(_), Text(_)) => Ordering::Less,
        (Text(x), Text(y)) => x.as_bytes().cmp(y.as_bytes()),
    }
}

fn literal_value(l: &Literal) -> SqlValue {
    match l {
        Literal::Integer(i) => SqlValue::Integer(*i),
        Literal::Real(r) => SqlValue::Real(*r),
        Literal::Text(s) => SqlValue::Text(s.clone()),
    }
}

fn numeric_affinity_value(v: SqlValue) -> SqlValue {
    match v {
        SqlValue::Text(s) => match read_number(&s) {
            None => SqlValue::Text(s),
            Some((x, is_int)) => {
                if is_int {
                    if let Ok(i) = s.trim().trim_start_matches('+').parse::<i64>() {
                        return SqlValue::Integer(i);
                    }
                }
                SqlValue::Real(x)
            }
        },
        other => other,
    }
}

/// Outcome of evaluating a predicate on one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RowOutcome {
    pub matched: bool,
    /// A comparison on this row paired a number with text.
    pub mixed_kinds: bool,
}

pub struct RowEvaluator<'a> {
    table: &'a Table,
    stored: Vec<Vec<SqlValue>>,
}

impl<'a> RowEvaluator<'a> {
    pub fn new(table: &'a Table) -> Self {
        let stored = table
            .rows()
            .iter()
            .map(|r| r.iter().map(|c| numeric_affinity(c)).collect())
            .collect();
        RowEvaluator { table, stored }
    }

    /// Resolve `c1..cN` (case-insensitive) to a column index.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        let n = name.strip_prefix(['c', 'C'])?;
        if n.starts_with('0') {
            return None;
        }
        let k: usize = n.parse().ok()?;
        (1..=self.table.n_cols()).contains(&k).then(|| k - 1)
    }

    pub fn check_columns(&self, e: &Expr) -> Result<(), SqlError> {
        let mut missing = None;
        visit_operands(e, &mut |op| {
            if let Operand::Column(c) = op {
                if missing.is_none() && self.column_index(c).is_none() {
                    missing = Some(c.clone());
                }
            }
        });
        match missing {
            Some(c) => Err(SqlError::UnknownColumn(c)),
            None => Ok(()),
        }
    }

    pub fn eval(&self, e: &Expr, row: usize) -> RowOutcome {
        let mut mixed = false;
        let matched = self.eval_bool(e, row, &mut mixed);
        RowOutcome {
            matched,
            mixed_kinds: mixed,
        }
    }

    fn operand(&self, op: &Operand, row: usize) -> (SqlValue, bool) {
        match op {
            Operand::Column(c) => {
                let col = self.column_index(c).expect("columns checked before evaluation");
                (self.stored[row][col].clone(), true)
            }
            Operand::Literal(l) => (literal_value(l), false),
        }
    }

    fn compare(&self, left: &Operand, right: &Operand, row: usize, mixed: &mut bool) -> Ordering {
        let (mut a, a_col) = self.operand(left, row);
        let (mut b, b_col) = self.operand(right, row);
        if a_col && !b_col {
            b = numeric_affinity_value(b);
        } else if b_col && !a_col {
            a = numeric_affinity_value(a);
        }
        if a.is_numeric() != b.is_numeric() {
            *mixed = true;
        }
        compare_values(&a, &b)
    }

    fn eval_bool(&self, e: &Expr, row: usize, mixed: &mut bool) -> bool {
        match e {
            // no short-circuit, so kind flags cover every comparison
            Expr::And(xs) => xs.iter().fold(true, |acc, x| self.eval_bool(x, row, mixed) & acc),
            Expr::Or(xs) => xs.iter().fold(false, |acc, x| self.eval_bool(x, row, mixed) | acc),
            Expr::Not(x) => !self.eval_bool(x, row, mixed),
            Expr::Compare { left, op, right } => {
                let ord = self.compare(left, right, row, mixed);
                match op {
                    CmpOp::Eq => ord == Ordering::Equal,
                    CmpOp::Ne => ord != Ordering::Equal,
                    CmpOp::Lt => ord == Ordering::Less,
                    CmpOp::Le => ord != Ordering::Greater,
                    CmpOp::Gt => ord == Ordering::Greater,
                    CmpOp::Ge => ord != Ordering::Less,
                }
            }
            Expr::Like {
                operand,
                pattern,
                negated,
            } => {
                let text = self.operand(operand, row).0.to_text();
                like(pattern, &text) != *negated
            }
            Expr::In {
                operand,
                list,
                negated,
            } => {
                let mut hit = false;
                for l in list {
                    let rhs = Operand::Literal(l.clone());
                    hit |= self.compare(operand, &rhs, row, mixed) == Ordering::Equal;
                }
                hit != *negated
            }
            Expr::Between {
                operand,
                low,
                high,
                negated,
            } => {
                let lo = self.compare(operand, low, row, mixed) != Ordering::Less;
                let hi = self.compare(operand, high, row, mixed) != Ordering::Greater;
                (lo && hi) != *negated
            }
        }
    }
}

fn visit_operands(e: &Expr, f: &mut impl FnMut(&Operand)) {
    match e {
        Expr::And(xs) | Expr::Or(xs) => xs.iter().for_each(|x| visit_operands(x, f)),
        Expr::Not(x) => visit_operands(x, f),
        Expr::Compare { left, right, .. } => {
            f(left);
            f(right);
        }
        Expr::Like { operand, .. } | Expr::In { operand, .. } => f(operand),
        Expr::Between {
            operand, low, high, ..
        } => {
            f(operand);
            f(low);
            f(high);
        }
    }
}

/// LIKE with `%` and `_` wildcards, ASCII case-insensitive.
pub fn like(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().map(|c| c.to_ascii_lowercase()).collect();
    let t: Vec<char> = text.chars().map(|c| c.to_ascii_lowercase()).collect();
    // classic two-pointer wildcard match with backtracking to the last '%'
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '_' || (p[pi] != '%' && p[pi] == t[ti])) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '%' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '%')
}
