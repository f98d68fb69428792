//! The six table serializations: markdown, csv, tsv, json, html and kv.
//!
//! Every emitter is byte-stable and every parser inverts its emitter exactly:
//! `parse(&emit(t, f), f)` reproduces the headers and cell strings of `t`.
//!
//! Dialects:
//! - markdown: `| a | b |` rows, a `| --- |` separator after the header.
//!   Backslash escapes `\\`, `\|`, `\n`, `\r`, `\t`; edge spaces as `\ `.
//!   Unescaped whitespace around a cell is trimmed on parse.
//! - csv: RFC 4180 quoting with `"` doubling, `\n` record terminator.
//! - tsv: as csv with a tab delimiter; cell tabs and backslashes are written
//!   as `\t` and `\\`.
//! - json: `{"headers":[..],"rows":[[..]]}` on one line.
//! - html: `table`/`tr`/`th`/`td` only; the first row is the header row.
//! - kv: one line per row, `row i: header = value; header = value`, 1-indexed,
//!   with markdown-style escapes for `;` and `=`. A table without rows is
//!   written as a single `headers: a; b` line.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SerializationFormat {
    Markdown,
    Csv,
    Tsv,
    Json,
    Html,
    Kv,
}

impl SerializationFormat {
    pub const ALL: [SerializationFormat; 6] = [
        SerializationFormat::Markdown,
        SerializationFormat::Csv,
        SerializationFormat::Tsv,
        SerializationFormat::Json,
        SerializationFormat::Html,
        SerializationFormat::Kv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SerializationFormat::Markdown => "markdown",
            SerializationFormat::Csv => "csv",
            SerializationFormat::Tsv => "tsv",
            SerializationFormat::Json => "json",
            SerializationFormat::Html => "html",
            SerializationFormat::Kv => "kv",
        }
    }
}

impl fmt::Display for SerializationFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SerializationFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SerializationFormat::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown serialization format {s:?}"))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SerializationError {
    #[error("malformed {format} input at line {line}: {reason}")]
    MalformedInput {
        format: SerializationFormat,
        line: usize,
        reason: String,
    },
}

fn malformed(format: SerializationFormat, line: usize, reason: impl Into<String>) -> SerializationError {
    SerializationError::MalformedInput {
        format,
        line,
        reason: reason.into(),
    }
}

/// A parsed table plus the indices of data rows that were short and padded
/// with empty cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed {
    pub table: Table,
    pub padded_rows: Vec<usize>,
}

pub fn emit(t: &Table, f: SerializationFormat) -> String {
    match f {
        SerializationFormat::Markdown => emit_markdown(t),
        SerializationFormat::Csv => emit_delimited(t, b',', |s| s.to_owned()),
        SerializationFormat::Tsv => emit_delimited(t, b'\t', escape_tsv),
        SerializationFormat::Json => emit_json(t),
        SerializationFormat::Html => emit_html(t),
        SerializationFormat::Kv => emit_kv(t),
    }
}

pub fn parse(s: &str, f: SerializationFormat, table_id: &str) -> Result<Parsed, SerializationError> {
    let (headers, rows) = match f {
        SerializationFormat::Markdown => parse_markdown(s)?,
        SerializationFormat::Csv => parse_delimited(s, b',', f, |c| c.to_owned())?,
        SerializationFormat::Tsv => parse_delimited(s, b'\t', f, unescape_tsv)?,
        SerializationFormat::Json => parse_json(s)?,
        SerializationFormat::Html => parse_html(s)?,
        SerializationFormat::Kv => parse_kv(s)?,
    };
    finish(f, table_id, headers, rows)
}

/// Rows as parsed, each with the source line it came from.
type RawRows = Vec<(usize, Vec<String>)>;

fn finish(
    f: SerializationFormat,
    table_id: &str,
    headers: Vec<String>,
    rows: RawRows,
) -> Result<Parsed, SerializationError> {
    if headers.is_empty() {
        return Err(malformed(f, 1, "no header cells"));
    }
    let mut padded_rows = Vec::new();
    let mut grid = Vec::with_capacity(rows.len());
    for (i, (line, mut row)) in rows.into_iter().enumerate() {
        if row.len() > headers.len() {
            return Err(malformed(
                f,
                line,
                format!("row has {} cells but the header has {}", row.len(), headers.len()),
            ));
        }
        if row.len() < headers.len() {
            row.resize(headers.len(), String::new());
            padded_rows.push(i);
        }
        grid.push(row);
    }
    let id = if table_id.is_empty() { "parsed" } else { table_id };
    Ok(Parsed {
        table: Table::from_parts_unchecked(id.to_owned(), headers, grid),
        padded_rows,
    })
}

// ---------------------------------------------------------------------------
// backslash escaping shared by markdown and kv

fn escape_backslash(s: &str, reserved: &[char]) -> String {
    let chars: Vec<char> = s.chars().collect();
    let lead = chars.iter().take_while(|&&c| c == ' ').count();
    let trail = if lead == chars.len() {
        0
    } else {
        chars.iter().rev().take_while(|&&c| c == ' ').count()
    };
    let mut out = String::with_capacity(s.len() + 2);
    for (i, &c) in chars.iter().enumerate() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            ' ' if i < lead || i >= chars.len() - trail => out.push_str("\\ "),
            c if reserved.contains(&c) => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    out
}

/// Split on `delim` where it is not preceded by an escaping backslash.
fn split_unescaped(s: &str, delim: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut start = 0;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if escaped {
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == delim {
            parts.push(&s[start..i]);
            start = i + c.len_utf8();
        }
    }
    parts.push(&s[start..]);
    parts
}

/// Decode escapes and trim unescaped spaces/tabs at both ends.
fn unescape_trim(seg: &str) -> Result<String, &'static str> {
    let mut chars: Vec<(char, bool)> = Vec::with_capacity(seg.len());
    let mut it = seg.chars();
    while let Some(c) = it.next() {
        if c == '\\' {
            let next = it.next().ok_or("dangling backslash")?;
            let decoded = match next {
                'n' => '\n',
                'r' => '\r',
                't' => '\t',
                other => other,
            };
            chars.push((decoded, true));
        } else {
            chars.push((c, false));
        }
    }
    let blank = |&(c, esc): &(char, bool)| !esc && (c == ' ' || c == '\t');
    let start = chars.iter().position(|x| !blank(x)).unwrap_or(chars.len());
    let end = chars.iter().rposition(|x| !blank(x)).map_or(start, |e| e + 1);
    Ok(chars[start..end].iter().map(|&(c, _)| c).collect())
}

fn lines(s: &str) -> impl Iterator<Item = (usize, &str)> {
    s.split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

// ---------------------------------------------------------------------------
// markdown

fn markdown_row(out: &mut String, cells: impl IntoIterator<Item = String>) {
    out.push('|');
    for c in cells {
        out.push(' ');
        out.push_str(&c);
        out.push_str(" |");
    }
    out.push('\n');
}

pub(crate) fn markdown_cell(s: &str) -> String {
    escape_backslash(s, &['|'])
}

/// One markdown table line for the given cells.
pub fn markdown_line(cells: &[String]) -> String {
    let mut s = String::new();
    markdown_row(&mut s, cells.iter().map(|c| markdown_cell(c)));
    s.pop();
    s
}

fn emit_markdown(t: &Table) -> String {
    let mut out = String::new();
    markdown_row(&mut out, t.headers().iter().map(|h| markdown_cell(h)));
    markdown_row(&mut out, t.headers().iter().map(|_| "---".to_owned()));
    for row in t.rows() {
        markdown_row(&mut out, row.iter().map(|c| markdown_cell(c)));
    }
    out
}

fn markdown_segments(line: &str) -> Vec<&str> {
    let mut segs = split_unescaped(line, '|');
    if segs.len() > 1 && line.trim_start().starts_with('|') {
        segs.remove(0);
    }
    if segs.len() > 1 && segs.last().is_some_and(|s| s.trim().is_empty()) {
        segs.pop();
    }
    segs
}

fn is_separator_cell(seg: &str) -> bool {
    let s = seg.trim();
    let s = s.strip_prefix(':').unwrap_or(s);
    let s = s.strip_suffix(':').unwrap_or(s);
    !s.is_empty() && s.bytes().all(|b| b == b'-')
}

fn parse_markdown(s: &str) -> Result<(Vec<String>, RawRows), SerializationError> {
    const F: SerializationFormat = SerializationFormat::Markdown;
    let cells = |line_no: usize, line: &str| -> Result<Vec<String>, SerializationError> {
        if !line.contains('|') {
            return Err(malformed(F, line_no, "not a table row"));
        }
        markdown_segments(line)
            .into_iter()
            .map(|seg| unescape_trim(seg).map_err(|e| malformed(F, line_no, e)))
            .collect()
    };
    let mut it = lines(s);
    let (hl, header_line) = it.next().ok_or_else(|| malformed(F, 1, "empty input"))?;
    let headers = cells(hl, header_line)?;
    match it.next() {
        Some((sl, sep)) => {
            let segs = markdown_segments(sep);
            if !sep.contains('|') || !segs.iter().all(|s| is_separator_cell(s)) {
                return Err(malformed(F, sl, "missing separator row"));
            }
            if segs.len() != headers.len() {
                return Err(malformed(
                    F,
                    sl,
                    format!("separator has {} columns, header has {}", segs.len(), headers.len()),
                ));
            }
        }
        None => return Err(malformed(F, hl + 1, "missing separator row")),
    }
    let rows = it
        .map(|(n, l)| cells(n, l).map(|c| (n, c)))
        .collect::<Result<_, _>>()?;
    Ok((headers, rows))
}

// ---------------------------------------------------------------------------
// csv / tsv

fn escape_tsv(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t")
}

fn unescape_tsv(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars().peekable();
    while let Some(c) = it.next() {
        if c == '\\' {
            match it.peek() {
                Some('\\') => {
                    out.push('\\');
                    it.next();
                }
                Some('t') => {
                    out.push('\t');
                    it.next();
                }
                _ => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn emit_delimited(t: &Table, delim: u8, escape: fn(&str) -> String) -> String {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delim)
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(Vec::new());
    w.write_record(t.headers().iter().map(|h| escape(h)))
        .expect("in-memory write");
    for row in t.rows() {
        w.write_record(row.iter().map(|c| escape(c)))
            .expect("in-memory write");
    }
    let bytes = w.into_inner().expect("in-memory flush");
    String::from_utf8(bytes).expect("utf-8 input yields utf-8 output")
}

fn parse_delimited(
    s: &str,
    delim: u8,
    f: SerializationFormat,
    unescape: fn(&str) -> String,
) -> Result<(Vec<String>, RawRows), SerializationError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delim)
        .from_reader(s.as_bytes());
    let mut records = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            malformed(f, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        records.push((line, rec.iter().map(unescape).collect::<Vec<_>>()));
    }
    let mut it = records.into_iter();
    let (_, headers) = it.next().ok_or_else(|| malformed(f, 1, "empty input"))?;
    Ok((headers, it.collect()))
}

// ---------------------------------------------------------------------------
// json

#[derive(Serialize)]
struct JsonTableRef<'a> {
    headers: &'a [String],
    rows: &'a [Vec<String>],
}

fn emit_json(t: &Table) -> String {
    serde_json::to_string(&JsonTableRef {
        headers: t.headers(),
        rows: t.rows(),
    })
    .expect("string table serializes")
}

fn json_cell(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        serde_json::Value::Null => Some(String::new()),
        _ => None,
    }
}

fn parse_json(s: &str) -> Result<(Vec<String>, RawRows), SerializationError> {
    const F: SerializationFormat = SerializationFormat::Json;
    let v: serde_json::Value =
        serde_json::from_str(s).map_err(|e| malformed(F, e.line(), e.to_string()))?;
    let list = |key: &str| -> Result<&Vec<serde_json::Value>, SerializationError> {
        v.get(key)
            .and_then(|x| x.as_array())
            .ok_or_else(|| malformed(F, 1, format!("missing array field {key:?}")))
    };
    let headers = list("headers")?
        .iter()
        .map(|h| json_cell(h).ok_or_else(|| malformed(F, 1, "header is not a scalar")))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for (i, row) in list("rows")?.iter().enumerate() {
        let cells = row
            .as_array()
            .ok_or_else(|| malformed(F, 1, format!("row {i} is not an array")))?
            .iter()
            .map(|c| json_cell(c).ok_or_else(|| malformed(F, 1, format!("row {i} has a non-scalar cell"))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((1, cells));
    }
    Ok((headers, rows))
}

// ---------------------------------------------------------------------------
// html

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

fn emit_html(t: &Table) -> String {
    let mut out = String::from("<table>\n<tr>");
    for h in t.headers() {
        out.push_str("<th>");
        out.push_str(&escape_html(h));
        out.push_str("</th>");
    }
    out.push_str("</tr>\n");
    for row in t.rows() {
        out.push_str("<tr>");
        for c in row {
            out.push_str("<td>");
            out.push_str(&escape_html(c));
            out.push_str("</td>");
        }
        out.push_str("</tr>\n");
    }
    out.push_str("</table>\n");
    out
}

fn decode_entities(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let decoded = rest[1..].find(';').filter(|&e| e <= 10).and_then(|e| {
            let name = &rest[1..1 + e];
            let c = match name {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some('\u{a0}'),
                _ => {
                    let code = if let Some(hex) = name.strip_prefix("#x").or_else(|| name.strip_prefix("#X")) {
                        u32::from_str_radix(hex, 16).ok()
                    } else {
                        name.strip_prefix('#').and_then(|d| d.parse().ok())
                    };
                    code.and_then(char::from_u32)
                }
            };
            c.map(|c| (c, e + 2))
        });
        match decoded {
            Some((c, len)) => {
                out.push(c);
                rest = &rest[len..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn line_of(s: &str, byte: usize) -> usize {
    s[..byte].bytes().filter(|&b| b == b'\n').count() + 1
}

fn parse_html(s: &str) -> Result<(Vec<String>, RawRows), SerializationError> {
    const F: SerializationFormat = SerializationFormat::Html;
    let mut rows: RawRows = Vec::new();
    let mut row: Option<(usize, Vec<String>)> = None;
    let mut cell: Option<String> = None;
    let mut in_table = false;
    let mut seen_table = false;
    let mut i = 0;
    let bytes = s.as_bytes();

    fn close_cell(cell: &mut Option<String>, row: &mut Option<(usize, Vec<String>)>) {
        if let Some(text) = cell.take() {
            if let Some((_, r)) = row.as_mut() {
                r.push(decode_entities(&text));
            }
        }
    }

    while i < s.len() {
        if bytes[i] != b'<' {
            let next = s[i..].find('<').map_or(s.len(), |o| i + o);
            if let Some(c) = cell.as_mut() {
                c.push_str(&s[i..next]);
            }
            i = next;
            continue;
        }
        if s[i..].starts_with("<!--") {
            let end = s[i..]
                .find("-->")
                .ok_or_else(|| malformed(F, line_of(s, i), "unterminated comment"))?;
            i += end + 3;
            continue;
        }
        // find the end of the tag, skipping quoted attribute values
        let mut j = i + 1;
        let mut quote = None;
        while j < s.len() {
            let b = bytes[j];
            match quote {
                Some(q) if b == q => quote = None,
                Some(_) => {}
                None if b == b'"' || b == b'\'' => quote = Some(b),
                None if b == b'>' => break,
                None => {}
            }
            j += 1;
        }
        if j >= s.len() {
            return Err(malformed(F, line_of(s, i), "unterminated tag"));
        }
        let inner = s[i + 1..j].trim();
        let (closing, inner) = match inner.strip_prefix('/') {
            Some(rest) => (true, rest.trim_start()),
            None => (false, inner),
        };
        let name: String = inner
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match (name.as_str(), closing) {
            ("table", false) => {
                if seen_table {
                    break;
                }
                in_table = true;
                seen_table = true;
            }
            ("table", true) => {
                close_cell(&mut cell, &mut row);
                rows.extend(row.take());
                break;
            }
            ("tr", false) if in_table => {
                close_cell(&mut cell, &mut row);
                rows.extend(row.take());
                row = Some((line_of(s, i), Vec::new()));
            }
            ("tr", true) if in_table => {
                close_cell(&mut cell, &mut row);
                rows.extend(row.take());
            }
            ("td" | "th", false) if in_table => {
                close_cell(&mut cell, &mut row);
                if row.is_none() {
                    row = Some((line_of(s, i), Vec::new()));
                }
                cell = Some(String::new());
            }
            ("td" | "th", true) if in_table => close_cell(&mut cell, &mut row),
            // other markup inside a cell is dropped, its text kept
            _ => {}
        }
        i = j + 1;
    }
    if !seen_table {
        return Err(malformed(F, 1, "no <table> element"));
    }
    close_cell(&mut cell, &mut row);
    rows.extend(row.take());
    let mut it = rows.into_iter();
    let (_, headers) = it.next().ok_or_else(|| malformed(F, 1, "table has no rows"))?;
    Ok((headers, it.collect()))
}

// ---------------------------------------------------------------------------
// kv

fn kv_cell(s: &str) -> String {
    escape_backslash(s, &[';', '='])
}

fn emit_kv(t: &Table) -> String {
    let mut out = String::new();
    if t.n_rows() == 0 {
        out.push_str("headers: ");
        let hs: Vec<String> = t.headers().iter().map(|h| kv_cell(h)).collect();
        out.push_str(&hs.join("; "));
        out.push('\n');
        return out;
    }
    for (i, row) in t.rows().iter().enumerate() {
        out.push_str(&format!("row {}: ", i + 1));
        let pairs: Vec<String> = t
            .headers()
            .iter()
            .zip(row)
            .map(|(h, v)| format!("{} = {}", kv_cell(h), kv_cell(v)))
            .collect();
        out.push_str(&pairs.join("; "));
        out.push('\n');
    }
    out
}

fn parse_kv(s: &str) -> Result<(Vec<String>, RawRows), SerializationError> {
    const F: SerializationFormat = SerializationFormat::Kv;
    let mut headers: Option<Vec<String>> = None;
    let mut header_only = false;
    let mut rows: RawRows = Vec::new();
    for (n, line) in lines(s) {
        if let Some(rest) = line.strip_prefix("headers:") {
            if headers.is_some() {
                return Err(malformed(F, n, "headers line must come first and alone"));
            }
            let hs = split_unescaped(rest, ';')
                .into_iter()
                .map(|seg| unescape_trim(seg).map_err(|e| malformed(F, n, e)))
                .collect::<Result<Vec<_>, _>>()?;
            headers = Some(hs);
            header_only = true;
            continue;
        }
        if header_only {
            return Err(malformed(F, n, "row after a headers-only line"));
        }
        let rest = line
            .strip_prefix("row ")
            .ok_or_else(|| malformed(F, n, "expected `row <i>:`"))?;
        let colon = rest
            .find(':')
            .ok_or_else(|| malformed(F, n, "expected `row <i>:`"))?;
        let idx: usize = rest[..colon]
            .trim()
            .parse()
            .map_err(|_| malformed(F, n, "row index is not a number"))?;
        if idx != rows.len() + 1 {
            return Err(malformed(F, n, format!("expected row {}, found row {idx}", rows.len() + 1)));
        }
        let mut keys = Vec::new();
        let mut values = Vec::new();
        for pair in split_unescaped(&rest[colon + 1..], ';') {
            let kv = split_unescaped(pair, '=');
            if kv.len() != 2 {
                return Err(malformed(F, n, "expected `header = value`"));
            }
            keys.push(unescape_trim(kv[0]).map_err(|e| malformed(F, n, e))?);
            values.push(unescape_trim(kv[1]).map_err(|e| malformed(F, n, e))?);
        }
        match &headers {
            None => headers = Some(keys),
            Some(hs) => {
                if keys.len() > hs.len() || hs[..keys.len()] != keys[..] {
                    return Err(malformed(F, n, "row keys differ from the first row's headers"));
                }
            }
        }
        rows.push((n, values));
    }
    let headers = headers.ok_or_else(|| malformed(F, 1, "empty input"))?;
    Ok((headers, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use SerializationFormat::*;

    fn one_by_one() -> Table {
        Table::new("t", vec!["h".into()], vec![vec!["v".into()]]).unwrap()
    }

    #[test]
    fn emit_examples() {
        let t = one_by_one();
        assert_eq!(emit(&t, Csv), "h\nv\n");
        assert_eq!(emit(&t, Kv), "row 1: h = v\n");
        assert_eq!(emit(&t, Json), r#"{"headers":["h"],"rows":[["v"]]}"#);
        assert_eq!(emit(&t, Markdown), "| h |\n| --- |\n| v |\n");
        assert_eq!(emit(&t, Tsv), "h\nv\n");
        assert_eq!(
            emit(&t, Html),
            "<table>\n<tr><th>h</th></tr>\n<tr><td>v</td></tr>\n</table>\n"
        );
    }

    #[test]
    fn parse_examples() {
        let t = one_by_one();
        assert_eq!(parse("h\nv\n", Csv, "t").unwrap().table, t);
        assert_eq!(parse("|h|\n|---|\n|v|", Markdown, "t").unwrap().table, t);
        let err = parse("|h|\n|v|", Markdown, "t").unwrap_err();
        assert!(matches!(
            err,
            SerializationError::MalformedInput { format: Markdown, line: 2, .. }
        ));
    }

    #[test]
    fn ragged_rows_are_padded_and_flagged() {
        let p = parse("a,b\n1\n2,3\n", Csv, "t").unwrap();
        assert_eq!(p.padded_rows, vec![0]);
        assert_eq!(p.table.rows()[0], vec!["1".to_string(), String::new()]);

        let p = parse("| a | b |\n|---|---|\n| 1 |\n", Markdown, "t").unwrap();
        assert_eq!(p.padded_rows, vec![0]);

        assert!(parse("a\n1,2\n", Csv, "t").is_err());
    }

    #[test]
    fn markdown_alignment_and_outer_pipes() {
        let p = parse("a | b\n:--|--:\nx | y\n", Markdown, "t").unwrap();
        assert_eq!(p.table.headers(), ["a", "b"]);
        assert_eq!(p.table.rows()[0], ["x", "y"]);
    }

    #[test]
    fn html_tolerates_attributes_and_missing_end_tags() {
        let html = r#"<TABLE class="x"><tr><th scope="col">a &amp; b</th><th>c</th>
            <tr><td>1<td><b>2</b></table>"#;
        let p = parse(html, Html, "t").unwrap();
        assert_eq!(p.table.headers(), ["a & b", "c"]);
        assert_eq!(p.table.rows()[0], ["1", "2"]);
        assert!(parse("<p>no table</p>", Html, "t").is_err());
    }

    #[test]
    fn kv_rejects_out_of_order_rows() {
        assert!(parse("row 2: a = 1\n", Kv, "t").is_err());
        assert!(parse("row 1: a = 1\nrow 2: b = 1\n", Kv, "t").is_err());
        assert!(parse("row 1: a 1\n", Kv, "t").is_err());
    }

    #[test]
    fn empty_table_round_trips_everywhere() {
        let t = Table::new("t", vec!["a".into(), "b c".into()], vec![]).unwrap();
        for f in SerializationFormat::ALL {
            assert_eq!(parse(&emit(&t, f), f, "t").unwrap().table, t, "{f}");
        }
    }

    #[test]
    fn reserved_characters_round_trip() {
        let nasty = [
            "", " ", "  lead", "trail ", "a|b", "x;y=z", "\"q\"", "c,d", "tab\there",
            "new\nline", "cr\r", "back\\slash", "\\n", "<td>&amp;", "é ß", "\u{a0}",
        ];
        let rows: Vec<Vec<String>> = nasty.iter().map(|s| vec![s.to_string(), "k".into()]).collect();
        let t = Table::new("t", vec!["h|;=".into(), " ".into()], rows).unwrap();
        for f in SerializationFormat::ALL {
            let text = emit(&t, f);
            assert_eq!(parse(&text, f, "t").unwrap().table, t, "{f}: {text}");
        }
    }

    #[test]
    fn format_names_parse() {
        for f in SerializationFormat::ALL {
            assert_eq!(f.name().parse::<SerializationFormat>().unwrap(), f);
        }
        assert!("xml".parse::<SerializationFormat>().is_err());
    }
}
