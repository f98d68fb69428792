//! Table data model, value normalization and the overlap primitives shared by
//! every other stage.

use std::collections::HashSet;
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TableError {
    #[error("table id must be nonempty")]
    EmptyId,
    #[error("table {table_id}: at least one column is required")]
    NoColumns { table_id: String },
    #[error("table {table_id}: row {row} has {found} cells, expected {expected}")]
    Ragged {
        table_id: String,
        row: usize,
        found: usize,
        expected: usize,
    },
}

/// A rectangular table of raw cell strings.
///
/// Cells are kept raw; normalization depends on a [`GroundingConfig`] and is
/// computed on demand so the same table can be swept across configurations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TableRecord", into = "TableRecord")]
pub struct Table {
    table_id: String,
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

/// Wire form of a table: one JSONL object per table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableRecord {
    pub table_id: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TryFrom<TableRecord> for Table {
    type Error = TableError;

    fn try_from(r: TableRecord) -> Result<Self, Self::Error> {
        Table::new(r.table_id, r.headers, r.rows)
    }
}

impl From<Table> for TableRecord {
    fn from(t: Table) -> Self {
        TableRecord {
            table_id: t.table_id,
            headers: t.headers,
            rows: t.rows,
        }
    }
}

impl Table {
    pub fn new(
        table_id: impl Into<String>,
        headers: Vec<String>,
        rows: Vec<Vec<String>>,
    ) -> Result<Self, TableError> {
        let table_id = table_id.into();
        if table_id.is_empty() {
            return Err(TableError::EmptyId);
        }
        if headers.is_empty() {
            return Err(TableError::NoColumns { table_id });
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != headers.len() {
                return Err(TableError::Ragged {
                    table_id,
                    row: i,
                    found: row.len(),
                    expected: headers.len(),
                });
            }
        }
        Ok(Table {
            table_id,
            headers,
            rows,
        })
    }

    pub fn table_id(&self) -> &str {
        &self.table_id
    }

    pub fn headers(&self) -> &[String] {
        &self.headers
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.headers.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&str> {
        self.rows.get(row).and_then(|r| r.get(col)).map(String::as_str)
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = &str> + '_ {
        self.rows.iter().map(move |r| r[col].as_str())
    }

    pub fn cells(&self) -> impl Iterator<Item = &str> + '_ {
        self.rows.iter().flat_map(|r| r.iter().map(String::as_str))
    }

    pub fn with_id(mut self, table_id: impl Into<String>) -> Self {
        let id = table_id.into();
        assert!(!id.is_empty(), "table id must be nonempty");
        self.table_id = id;
        self
    }

    /// Keep only the given rows and columns, in the order given.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Table {
        Table {
            table_id: self.table_id.clone(),
            headers: cols.iter().map(|&c| self.headers[c].clone()).collect(),
            rows: rows
                .iter()
                .map(|&r| cols.iter().map(|&c| self.rows[r][c].clone()).collect())
                .collect(),
        }
    }

    pub(crate) fn from_parts_unchecked(
        table_id: String,
        headers: Vec<String>,
        rows: Vec<Vec<String>>,
    ) -> Table {
        debug_assert!(rows.iter().all(|r| r.len() == headers.len()));
        Table {
            table_id,
            headers,
            rows,
        }
    }
}

/// How multi-valued answers are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MultivaluePolicy {
    #[default]
    AnyElement,
    AllElements,
}

/// Normalization and matching settings used whenever a prediction, gold value
/// or denotation is compared against another value or a table cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundingConfig {
    pub casefold: bool,
    pub strip_punct: bool,
    /// Drop the English articles "a", "an", "the" from text forms.
    pub strip_articles: bool,
    /// Detect numeric values. When off every value is compared as text.
    pub numeric: bool,
    pub substring_text_match: bool,
    pub numeric_abs_tol: f64,
    pub numeric_rel_tol: f64,
    pub multivalue_policy: MultivaluePolicy,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        GroundingConfig {
            casefold: true,
            strip_punct: true,
            strip_articles: false,
            numeric: true,
            substring_text_match: true,
            numeric_abs_tol: 1e-3,
            numeric_rel_tol: 0.01,
            multivalue_policy: MultivaluePolicy::AnyElement,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("numeric_abs_tol must be finite and >= 0, got {0}")]
    AbsTol(f64),
    #[error("numeric_rel_tol must lie in [0, 1], got {0}")]
    RelTol(f64),
    #[error("token budget fields must be positive")]
    Budget,
}

impl GroundingConfig {
    /// Exact-answer comparison: the normalization used by exact match, no
    /// numeric tolerance and no substring containment.
    pub fn exact() -> Self {
        GroundingConfig {
            casefold: true,
            strip_punct: true,
            strip_articles: true,
            numeric: false,
            substring_text_match: false,
            numeric_abs_tol: 0.0,
            numeric_rel_tol: 0.0,
            multivalue_policy: MultivaluePolicy::AnyElement,
        }
    }

    pub fn with_tolerance(mut self, abs: f64, rel: f64) -> Self {
        self.numeric_abs_tol = abs;
        self.numeric_rel_tol = rel;
        self
    }

    pub fn with_substring(mut self, on: bool) -> Self {
        self.substring_text_match = on;
        self
    }

    pub fn with_multivalue(mut self, policy: MultivaluePolicy) -> Self {
        self.multivalue_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.numeric_abs_tol.is_finite() && self.numeric_abs_tol >= 0.0) {
            return Err(ConfigError::AbsTol(self.numeric_abs_tol));
        }
        if !(0.0..=1.0).contains(&self.numeric_rel_tol) {
            return Err(ConfigError::RelTol(self.numeric_rel_tol));
        }
        Ok(())
    }
}

/// Table-token budget for context construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub max_table_tokens: usize,
    pub max_cols: usize,
}

impl TokenBudget {
    pub const STANDARD: [usize; 3] = [512, 1024, 2048];

    pub fn new(max_table_tokens: usize) -> Self {
        TokenBudget {
            max_table_tokens,
            max_cols: 16,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_table_tokens == 0 || self.max_cols == 0 {
            return Err(ConfigError::Budget);
        }
        Ok(())
    }
}

impl Default for TokenBudget {
    fn default() -> Self {
        TokenBudget::new(1024)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Numeric,
    Text,
}

/// A normalized cell, answer or denotation value.
///
/// `text` is always populated: for numeric values it is the canonical decimal
/// rendering of `num`, which lets numeric and text values be compared as text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedValue {
    pub kind: ValueKind,
    pub num: Option<f64>,
    pub text: String,
}

impl NormalizedValue {
    pub fn is_numeric(&self) -> bool {
        self.kind == ValueKind::Numeric
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }
}

impl fmt::Display for NormalizedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

const CURRENCY: [char; 4] = ['$', '€', '£', '%'];

/// Parse a locale-independent number: optional sign, digits with optional
/// "," or "_" grouping, at most one decimal point, currency symbols and "%"
/// ignored (no rescaling).
pub fn parse_number(raw: &str) -> Option<f64> {
    let s: String = raw.trim().chars().filter(|c| !CURRENCY.contains(c)).collect();
    let s = s.trim();
    let (negative, body) = match s.as_bytes().first()? {
        b'+' => (false, &s[1..]),
        b'-' => (true, &s[1..]),
        _ => (false, s),
    };
    let body = body.trim_start_matches(|c| CURRENCY.contains(&c));
    if body.is_empty() {
        return None;
    }
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    if let Some(f) = frac_part {
        if f.is_empty() && int_part.is_empty() {
            return None;
        }
        if !f.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
    }
    let digits = strip_grouping(int_part)?;
    if digits.is_empty() && frac_part.is_none_or(str::is_empty) {
        return None;
    }
    let mut canonical = String::with_capacity(digits.len() + 8);
    if negative {
        canonical.push('-');
    }
    canonical.push_str(if digits.is_empty() { "0" } else { &digits });
    if let Some(f) = frac_part.filter(|f| !f.is_empty()) {
        canonical.push('.');
        canonical.push_str(f);
    }
    let v: f64 = canonical.parse().ok()?;
    // fold -0 into 0
    v.is_finite().then_some(v + 0.0)
}

/// Remove "," / "_" digit grouping. Commas must delimit groups of exactly
/// three digits; underscores may appear between any two digits.
fn strip_grouping(int_part: &str) -> Option<String> {
    if int_part.is_empty() {
        return Some(String::new());
    }
    if !int_part
        .chars()
        .all(|c| c.is_ascii_digit() || c == ',' || c == '_')
    {
        return None;
    }
    if int_part.starts_with([',', '_']) || int_part.ends_with([',', '_']) {
        return None;
    }
    if int_part.contains(",,") || int_part.contains("__") {
        return None;
    }
    if int_part.contains(',') {
        let groups: Vec<&str> = int_part.split(',').collect();
        let digit_len = |g: &str| g.chars().filter(char::is_ascii_digit).count();
        if groups[1..].iter().any(|g| digit_len(g) != 3) || digit_len(groups[0]) > 3 {
            return None;
        }
    }
    Some(int_part.chars().filter(char::is_ascii_digit).collect())
}

/// Canonical decimal rendering of a parsed number.
pub fn format_number(v: f64) -> String {
    format!("{}", v + 0.0)
}

fn is_strippable(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Periods and apostrophes between two letters ("U.S.", "o'neil") are
/// dropped; other punctuation becomes whitespace.
fn is_joiner(c: char, chars: &[char], i: usize) -> bool {
    matches!(c, '.' | '\'' | '\u{2019}')
        && i > 0
        && chars[i - 1].is_alphabetic()
        && chars.get(i + 1).is_some_and(|n| n.is_alphabetic())
}

/// The text form of a raw value: optional casefolding, punctuation dropped
/// inside words and replaced by whitespace elsewhere, optional article
/// removal, whitespace collapsed.
pub fn normalize_text(raw: &str, cfg: &GroundingConfig) -> String {
    let mut s: String = if cfg.casefold {
        raw.chars().flat_map(char::to_lowercase).collect()
    } else {
        raw.to_owned()
    };
    if cfg.strip_punct {
        let chars: Vec<char> = s.chars().collect();
        s = chars
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| {
                if !is_strippable(c) {
                    Some(c)
                } else if is_joiner(c, &chars, i) {
                    None
                } else {
                    Some(' ')
                }
            })
            .collect();
    }
    let words = s.split_whitespace();
    if cfg.strip_articles {
        words
            .filter(|w| !ARTICLES.iter().any(|a| w.eq_ignore_ascii_case(a)))
            .collect::<Vec<_>>()
            .join(" ")
    } else {
        words.collect::<Vec<_>>().join(" ")
    }
}

/// Normalize a raw string. Numeric detection runs first, on the raw string and
/// then on its text form, so normalization is idempotent on text values.
pub fn normalize(raw: &str, cfg: &GroundingConfig) -> NormalizedValue {
    let text = normalize_text(raw, cfg);
    if cfg.numeric {
        if let Some(v) = parse_number(raw).or_else(|| parse_number(&text)) {
            return NormalizedValue {
                kind: ValueKind::Numeric,
                num: Some(v),
                text: format_number(v),
            };
        }
    }
    NormalizedValue {
        kind: ValueKind::Text,
        num: None,
        text,
    }
}

const REL_EPSILON: f64 = 1e-12;

pub fn numbers_match(a: f64, b: f64, cfg: &GroundingConfig) -> bool {
    let diff = (a - b).abs();
    if diff <= cfg.numeric_abs_tol {
        return true;
    }
    let scale = a.abs().max(b.abs()).max(REL_EPSILON);
    diff / scale <= cfg.numeric_rel_tol
}

/// Compare two normalized values: tolerance for number pairs, equality or
/// (optionally) containment in either direction for anything else. An empty
/// text never matches a nonempty one by containment.
pub fn values_match(a: &NormalizedValue, b: &NormalizedValue, cfg: &GroundingConfig) -> bool {
    if let (Some(x), Some(y)) = (a.num, b.num) {
        return numbers_match(x, y, cfg);
    }
    if a.text == b.text {
        return true;
    }
    cfg.substring_text_match
        && !a.text.is_empty()
        && !b.text.is_empty()
        && (a.text.contains(&b.text) || b.text.contains(&a.text))
}

pub fn table_contains(t: &Table, v: &NormalizedValue, cfg: &GroundingConfig) -> bool {
    t.cells().any(|c| values_match(&normalize(c, cfg), v, cfg))
}

/// Jaccard overlap of two sets; two empty sets score 0.
pub fn jaccard<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Budget tokens: whitespace-separated runs, with every punctuation or symbol
/// character split out as its own token.
pub fn tokenize(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in s.split_whitespace() {
        let mut start = None;
        for (i, c) in chunk.char_indices() {
            if is_strippable(c) {
                if let Some(st) = start.take() {
                    out.push(&chunk[st..i]);
                }
                out.push(&chunk[i..i + c.len_utf8()]);
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(st) = start {
            out.push(&chunk[st..]);
        }
    }
    out
}

pub fn count_tokens(s: &str) -> usize {
    tokenize(s).len()
}

/// Keep the first `max` budget tokens of `s`, cutting at a token boundary.
pub fn truncate_tokens(s: &str, max: usize) -> &str {
    if max == 0 {
        return "";
    }
    let toks = tokenize(s);
    if toks.len() <= max {
        return s;
    }
    let last = toks[max - 1];
    // tokens are subslices of s
    let end = last.as_ptr() as usize - s.as_ptr() as usize + last.len();
    &s[..end]
}

/// Lowercased alphanumeric word tokens, used for retrieval and overlap.
pub fn content_tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.chars().flat_map(char::to_lowercase).collect())
        .collect()
}

pub fn token_set(s: &str) -> HashSet<String> {
    content_tokens(s).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> GroundingConfig {
        GroundingConfig::default()
    }

    fn num(v: f64) -> NormalizedValue {
        NormalizedValue {
            kind: ValueKind::Numeric,
            num: Some(v),
            text: format_number(v),
        }
    }

    fn text(s: &str) -> NormalizedValue {
        normalize(s, &cfg())
    }

    #[test]
    fn normalize_examples() {
        let v = normalize("Abc.", &cfg());
        assert_eq!(v.kind, ValueKind::Text);
        assert_eq!(v.text, "abc");

        let v = normalize("2,000", &cfg());
        assert_eq!(v.kind, ValueKind::Numeric);
        assert_eq!(v.num, Some(2000.0));

        let v = normalize("", &cfg());
        assert_eq!(v.kind, ValueKind::Text);
        assert_eq!(v.text, "");

        assert_eq!(normalize("U.S.", &cfg()).text, "us");
        assert_eq!(normalize("O'Neil", &cfg()).text, "oneil");
        assert_eq!(normalize("1990-91 season", &cfg()).text, "1990 91 season");
        assert_eq!(normalize("v1.2b", &cfg()).text, "v1 2b");
    }

    #[test]
    fn number_grammar() {
        assert_eq!(parse_number("$1,234.50"), Some(1234.5));
        assert_eq!(parse_number(" -3 "), Some(-3.0));
        assert_eq!(parse_number("+7"), Some(7.0));
        assert_eq!(parse_number("45%"), Some(45.0));
        assert_eq!(parse_number("1_000_000"), Some(1e6));
        assert_eq!(parse_number(".5"), Some(0.5));
        assert_eq!(parse_number("5."), Some(5.0));
        assert_eq!(parse_number("-0"), Some(0.0));
        assert_eq!(parse_number("1,2"), None);
        assert_eq!(parse_number("1.2.3"), None);
        assert_eq!(parse_number("12a"), None);
        assert_eq!(parse_number("."), None);
        assert_eq!(parse_number("-"), None);
        assert_eq!(parse_number("$"), None);
        assert_eq!(parse_number("1e5"), None);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn values_match_examples() {
        assert!(values_match(&num(3.14159), &num(3.1416), &cfg()));
        assert!(values_match(&text("new york"), &text("new york city"), &cfg()));
        // |Δ| = 2 > 1e-3 and 2/102 ≈ 0.0196 > 0.01
        assert!(!values_match(&num(100.0), &num(102.0), &cfg()));
    }

    #[test]
    fn empty_never_substring_matches() {
        assert!(!values_match(&text(""), &text("abc"), &cfg()));
        assert!(values_match(&text(""), &text("..."), &cfg()));
    }

    #[test]
    fn table_contains_examples() {
        let t = Table::new("t", vec!["a".into()], vec![vec!["7".into()]]).unwrap();
        assert!(table_contains(&t, &num(7.0), &cfg()));

        let empty = Table::new("e", vec!["a".into()], vec![]).unwrap();
        assert!(!table_contains(&empty, &num(7.0), &cfg()));

        let t = Table::new("t", vec!["n".into()], vec![vec!["Alice Smith".into()]]).unwrap();
        assert!(table_contains(&t, &text("alice"), &cfg()));
    }

    #[test]
    fn jaccard_examples() {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<HashSet<_>>();
        assert!((jaccard(&s(&["a", "b"]), &s(&["b", "c"])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&s(&["a", "b"]), &s(&["a", "b"])), 1.0);
        assert_eq!(jaccard(&s(&["a"]), &s(&["b"])), 0.0);
        assert_eq!(jaccard(&s(&[]), &s(&[])), 0.0);
    }

    #[test]
    fn count_tokens_examples() {
        assert_eq!(count_tokens("a b c"), 3);
        assert_eq!(count_tokens(""), 0);
        assert_eq!(tokenize("x, y"), vec!["x", ",", "y"]);
        assert_eq!(count_tokens("| a | b |"), 5);
    }

    #[test]
    fn truncation_cuts_on_token_boundary() {
        assert_eq!(truncate_tokens("a, b c", 2), "a,");
        assert_eq!(truncate_tokens("a b", 5), "a b");
        assert_eq!(truncate_tokens("a b", 0), "");
    }

    #[test]
    fn rejects_ragged_and_empty() {
        assert!(matches!(
            Table::new("t", vec!["a".into(), "b".into()], vec![vec!["1".into()]]),
            Err(TableError::Ragged { row: 0, .. })
        ));
        assert_eq!(
            Table::new("", vec!["a".into()], vec![]),
            Err(TableError::EmptyId)
        );
    }

    #[test]
    fn table_record_round_trip() {
        let line = r#"{"table_id":"t1","headers":["a","b"],"rows":[["1","x"]]}"#;
        let t: Table = serde_json::from_str(line).unwrap();
        assert_eq!(t.n_rows(), 1);
        assert_eq!(serde_json::to_string(&t).unwrap(), line);
        let bad = r#"{"table_id":"t1","headers":["a","b"],"rows":[["1"]]}"#;
        assert!(serde_json::from_str::<Table>(bad).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(GroundingConfig::default().validate().is_ok());
        assert!(cfg().with_tolerance(-1.0, 0.0).validate().is_err());
        assert!(cfg().with_tolerance(0.0, 1.5).validate().is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent_on_text(raw in "[ -~éÉß\u{a0}]{0,16}") {
            let c = cfg();
            let n = normalize(&raw, &c);
            if n.kind == ValueKind::Text {
                prop_assert_eq!(normalize(&n.text, &c), n);
            }
        }

        #[test]
        fn zero_tolerance_reduces_to_equality(a in "[ -~]{0,10}", b in "[ -~]{0,10}") {
            let c = cfg().with_tolerance(0.0, 0.0).with_substring(false);
            let (na, nb) = (normalize(&a, &c), normalize(&b, &c));
            prop_assert_eq!(values_match(&na, &nb, &c), na.text == nb.text);
        }

        #[test]
        fn table_contains_is_monotone(cells in proptest::collection::vec("[a-z0-9 ]{0,6}", 1..6), probe in "[a-z0-9]{1,4}") {
            let c = cfg();
            let v = normalize(&probe, &c);
            let t = Table::new("t", vec!["h".into()], cells.iter().map(|x| vec![x.clone()]).collect()).unwrap();
            let before = table_contains(&t, &v, &c);
            let mut rows = t.rows().to_vec();
            rows.push(vec![probe.clone()]);
            let grown = Table::new("t", vec!["h".into()], rows).unwrap();
            prop_assert!(table_contains(&grown, &v, &c));
            prop_assert!(!before || table_contains(&grown, &v, &c));
        }

        #[test]
        fn count_tokens_additive(a in "[ -~]{0,20}", b in "[ -~]{0,20}") {
            prop_assert_eq!(count_tokens(&format!("{a} {b}")), count_tokens(&a) + count_tokens(&b));
        }
    }
}
