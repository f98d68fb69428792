//! Sparse lexical scorers over row documents.

use std::collections::{BTreeSet, HashMap};

use super::{Field, RowDocument};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const BM25F_HEADER_WEIGHT: f64 = 0.5;
pub const BM25F_CELL_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params {
            k1: BM25_K1,
            b: BM25_B,
        }
    }
}

fn term_counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

fn unique_terms(query: &[String]) -> BTreeSet<&str> {
    query.iter().map(String::as_str).collect()
}

/// Probabilistic IDF with the `1 +` floor, so terms in half or more of the
/// corpus still score above zero.
pub fn bm25_idf(n_docs: usize, df: usize) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Okapi BM25 of each document (a token list) against the distinct query terms.
pub fn bm25_scores(query: &[String], docs: &[Vec<String>], p: Bm25Params) -> Vec<f64> {
    let n = docs.len();
    if n == 0 {
        return Vec::new();
    }
    let counts: Vec<HashMap<&str, usize>> = docs.iter().map(|d| term_counts(d)).collect();
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n as f64;
    let terms = unique_terms(query);
    let idf: Vec<(&str, f64)> = terms
        .iter()
        .map(|&t| {
            let df = counts.iter().filter(|c| c.contains_key(t)).count();
            (t, bm25_idf(n, df))
        })
        .collect();
    docs.iter()
        .zip(&counts)
        .map(|(d, c)| {
            let norm = if avgdl > 0.0 {
                1.0 - p.b + p.b * d.len() as f64 / avgdl
            } else {
                1.0
            };
            idf.iter()
                .map(|&(t, w)| {
                    let tf = *c.get(t).unwrap_or(&0) as f64;
                    if tf == 0.0 {
                        0.0
                    } else {
                        w * tf * (p.k1 + 1.0) / (tf + p.k1 * norm)
                    }
                })
                .sum()
        })
        .collect()
}

/// BM25F: per-field length-normalized term frequencies combined with field
/// weights before saturation. Document frequency counts a term once per row.
pub fn bm25f_scores(query: &[String], docs: &[RowDocument], p: Bm25Params) -> Vec<f64> {
    let n = docs.len();
    if n == 0 {
        return Vec::new();
    }
    let fields = [
        (Field::Header, BM25F_HEADER_WEIGHT),
        (Field::Cell, BM25F_CELL_WEIGHT),
    ];
    let counts: Vec<[HashMap<&str, usize>; 2]> = docs
        .iter()
        .map(|d| [term_counts(d.field(Field::Header)), term_counts(d.field(Field::Cell))])
        .collect();
    let avg: Vec<f64> = fields
        .iter()
        .map(|(f, _)| docs.iter().map(|d| d.field(*f).len()).sum::<usize>() as f64 / n as f64)
        .collect();
    let terms = unique_terms(query);
    let idf: Vec<(&str, f64)> = terms
        .iter()
        .map(|&t| {
            let df = counts
                .iter()
                .filter(|c| c.iter().any(|m| m.contains_key(t)))
                .count();
            (t, bm25_idf(n, df))
        })
        .collect();
    docs.iter()
        .zip(&counts)
        .map(|(d, c)| {
            idf.iter()
                .map(|&(t, w)| {
                    let mut tf = 0.0;
                    for (k, (f, weight)) in fields.iter().enumerate() {
                        let raw = *c[k].get(t).unwrap_or(&0) as f64;
                        if raw > 0.0 {
                            let norm = if avg[k] > 0.0 {
                                1.0 - p.b + p.b * d.field(*f).len() as f64 / avg[k]
                            } else {
                                1.0
                            };
                            tf += weight * raw / norm;
                        }
                    }
                    if tf == 0.0 {
                        0.0
                    } else {
                        w * tf / (p.k1 + tf)
                    }
                })
                .sum()
        })
        .collect()
}

/// Each cell is scored as its own document over the corpus of all cells; a
/// row takes its best cell.
pub fn cell_bm25_scores(query: &[String], cells: &[Vec<Vec<String>>], p: Bm25Params) -> Vec<f64> {
    let flat: Vec<Vec<String>> = cells.iter().flatten().cloned().collect();
    let scores = bm25_scores(query, &flat, p);
    let mut out = Vec::with_capacity(cells.len());
    let mut k = 0;
    for row in cells {
        let best = scores[k..k + row.len()].iter().copied().fold(0.0, f64::max);
        out.push(best);
        k += row.len();
    }
    out
}

/// Cosine similarity of `ln(1+tf)·ln((N+1)/(df+1))` vectors.
pub fn tfidf_scores(query: &[String], docs: &[Vec<String>]) -> Vec<f64> {
    let n = docs.len();
    let counts: Vec<HashMap<&str, usize>> = docs.iter().map(|d| term_counts(d)).collect();
    let mut df: HashMap<&str, usize> = HashMap::new();
    for c in &counts {
        for t in c.keys() {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let idf = |t: &str| ((n as f64 + 1.0) / (*df.get(t).unwrap_or(&0) as f64 + 1.0)).ln();
    let weigh = |c: &HashMap<&str, usize>| -> HashMap<String, f64> {
        c.iter()
            .map(|(t, &tf)| (t.to_string(), (1.0 + tf as f64).ln() * idf(t)))
            .collect()
    };
    let qv = weigh(&term_counts(query));
    let qn = qv.values().map(|w| w * w).sum::<f64>().sqrt();
    counts
        .iter()
        .map(|c| {
            let dv = weigh(c);
            let dn = dv.values().map(|w| w * w).sum::<f64>().sqrt();
            if qn == 0.0 || dn == 0.0 {
                return 0.0;
            }
            let dot: f64 = qv
                .iter()
                .map(|(t, w)| w * dv.get(t).copied().unwrap_or(0.0))
                .sum();
            dot / (qn * dn)
        })
        .collect()
}
