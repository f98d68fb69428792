//! Locating table values mentioned in a question.

use crate::table::{parse_number, Table};

/// A table value found in the question, as a byte span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    /// The trimmed cell value that matched.
    pub value: String,
    pub col: usize,
}

fn fold(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

/// Case-insensitive occurrences of `needle` in `hay` that start and end on
/// word boundaries. Returns byte spans.
fn find_words(hay: &str, needle: &str) -> Vec<(usize, usize)> {
    let h: Vec<(usize, char)> = hay.char_indices().collect();
    let n: Vec<char> = needle.chars().map(fold).collect();
    let mut out = Vec::new();
    if n.is_empty() || n.len() > h.len() {
        return out;
    }
    for i in 0..=h.len() - n.len() {
        if (0..n.len()).all(|k| fold(h[i + k].1) == n[k]) {
            let before_ok = i == 0 || !h[i - 1].1.is_alphanumeric() || !n[0].is_alphanumeric();
            let j = i + n.len();
            let after_ok = j == h.len() || !h[j].1.is_alphanumeric() || !n[n.len() - 1].is_alphanumeric();
            if before_ok && after_ok {
                let end = if j == h.len() { hay.len() } else { h[j].0 };
                out.push((h[i].0, end));
            }
        }
    }
    out
}

fn edge_trim(w: &str) -> &str {
    w.trim_matches(|c: char| !c.is_alphanumeric() && !"$€£%".contains(c))
}

/// Whitespace tokens of `hay` equal to `needle` once edge punctuation is
/// trimmed.
fn find_tokens(hay: &str, needle: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let base = hay.as_ptr() as usize;
    for w in hay.split_whitespace() {
        let t = edge_trim(w);
        if !t.is_empty() && t == needle {
            let start = t.as_ptr() as usize - base;
            out.push((start, start + t.len()));
        }
    }
    out
}

/// Whether a cell value may be treated as an entity: numeric, or at least
/// three characters long.
pub fn is_candidate(value: &str) -> bool {
    parse_number(value).is_some() || value.chars().count() >= 3
}

/// Non-overlapping mentions of cell values in `question`, chosen longest
/// first, then earliest, then by lowest column. Returned in question order.
pub fn find_mentions(question: &str, t: &Table) -> Vec<Mention> {
    let mut candidates: Vec<(String, usize)> = Vec::new();
    for col in 0..t.n_cols() {
        for v in t.column(col) {
            let v = v.trim();
            if is_candidate(v) && !candidates.iter().any(|(c, k)| c == v && *k == col) {
                candidates.push((v.to_owned(), col));
            }
        }
    }
    let mut hits: Vec<Mention> = Vec::new();
    for (value, col) in &candidates {
        let spans = if parse_number(value).is_some() {
            find_tokens(question, edge_trim(value))
        } else {
            find_words(question, value)
        };
        hits.extend(spans.into_iter().map(|(start, end)| Mention {
            start,
            end,
            value: value.clone(),
            col: *col,
        }));
    }
    hits.sort_by(|a, b| {
        (b.end - b.start)
            .cmp(&(a.end - a.start))
            .then(a.start.cmp(&b.start))
            .then(a.col.cmp(&b.col))
            .then(a.value.cmp(&b.value))
    });
    let mut chosen: Vec<Mention> = Vec::new();
    for m in hits {
        if chosen.iter().all(|c| m.end <= c.start || m.start >= c.end) {
            chosen.push(m);
        }
    }
    chosen.sort_by_key(|m| m.start);
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Table {
        Table::new(
            "t",
            vec!["name".into(), "pts".into()],
            vec![
                vec!["Alice".into(), "7".into()],
                vec!["Bob".into(), "17".into()],
                vec!["Alice Smith".into(), "1,000".into()],
            ],
        )
        .unwrap()
    }

    #[test]
    fn longest_first_and_boundaries() {
        let m = find_mentions("did alice smith beat Bob? bobby no", &table());
        let vals: Vec<&str> = m.iter().map(|m| m.value.as_str()).collect();
        assert_eq!(vals, ["Alice Smith", "Bob"]);
    }

    #[test]
    fn numbers_need_whole_tokens() {
        let m = find_mentions("scored 17, not 170 or 1,000.", &table());
        let vals: Vec<&str> = m.iter().map(|m| m.value.as_str()).collect();
        assert_eq!(vals, ["17", "1,000"]);
        let q = "scored 17, not 170 or 1,000.";
        assert_eq!(&q[m[0].start..m[0].end], "17");
    }

    #[test]
    fn unicode_casefold_spans() {
        let t = Table::new("t", vec!["c".into()], vec![vec!["Émile".into()]]).unwrap();
        let q = "was ÉMILE there";
        let m = find_mentions(q, &t);
        assert_eq!(&q[m[0].start..m[0].end], "ÉMILE");
    }
}
