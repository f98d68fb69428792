use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::table::{format_number, jaccard, parse_number, token_set, Table};

pub const BIAS_WORDS: [&str; 7] = ["not", "all", "most", "none", "less", "greater", "highest"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactFeatures {
    pub jaccard_overlap: f64,
    pub numeric_overlap: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub bias_indicators: [bool; 7],
}

/// Feature groups to keep when building a design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    pub overlap: bool,
    pub size: bool,
    pub bias: bool,
}

impl FeatureMask {
    pub const ALL: FeatureMask = FeatureMask {
        overlap: true,
        size: true,
        bias: true,
    };
    pub const NO_BIAS: FeatureMask = FeatureMask {
        bias: false,
        ..FeatureMask::ALL
    };
    pub const NO_OVERLAP: FeatureMask = FeatureMask {
        overlap: false,
        ..FeatureMask::ALL
    };

    pub fn slots(&self) -> Vec<String> {
        let mut s = Vec::new();
        if self.overlap {
            s.extend(["jaccard_overlap".to_owned(), "numeric_overlap".to_owned()]);
        }
        if self.size {
            s.extend(["n_rows".to_owned(), "n_cols".to_owned()]);
        }
        if self.bias {
            s.extend(BIAS_WORDS.iter().map(|w| format!("bias_{w}")));
        }
        s
    }
}

impl ArtifactFeatures {
    pub fn to_vec(&self, mask: FeatureMask) -> Vec<f64> {
        let mut v = Vec::with_capacity(11);
        if mask.overlap {
            v.extend([self.jaccard_overlap, self.numeric_overlap]);
        }
        if mask.size {
            v.extend([self.n_rows as f64, self.n_cols as f64]);
        }
        if mask.bias {
            v.extend(self.bias_indicators.iter().map(|&b| f64::from(u8::from(b))));
        }
        v
    }
}

fn numeric_tokens(s: &str) -> HashSet<String> {
    s.split_whitespace()
        .filter_map(|w| {
            let w = w.trim_matches(|c: char| !c.is_alphanumeric() && !"$€£%+-.".contains(c));
            let w = w.trim_end_matches(['.', ',']);
            parse_number(w).map(format_number)
        })
        .collect()
}

/// Overlap, size and bias-word features of a statement against its table.
/// Overlap is measured on content tokens of headers and cells.
pub fn extract_features(statement: &str, t: &Table) -> ArtifactFeatures {
    let s = token_set(statement);
    let mut tt: HashSet<String> = HashSet::new();
    let mut tn: HashSet<String> = HashSet::new();
    for text in t.headers().iter().map(String::as_str).chain(t.cells()) {
        tt.extend(token_set(text));
        tn.extend(numeric_tokens(text));
    }
    let mut bias_indicators = [false; 7];
    for (slot, w) in bias_indicators.iter_mut().zip(BIAS_WORDS) {
        *slot = s.contains(w);
    }
    ArtifactFeatures {
        jaccard_overlap: jaccard(&s, &tt),
        numeric_overlap: jaccard(&numeric_tokens(statement), &tn),
        n_rows: t.n_rows(),
        n_cols: t.n_cols(),
        bias_indicators,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> Table {
        Table::new(
            "t",
            vec!["player".into(), "points".into()],
            vec![vec!["alice".into(), "1,200".into()], vec!["bob".into(), "7".into()]],
        )
        .unwrap()
    }

    #[test]
    fn bias_words_are_whole_tokens() {
        let f = extract_features("alice did not score", &table());
        assert!(f.bias_indicators[0]);
        let f = extract_features("nothing here", &table());
        assert!(!f.bias_indicators[0]);
    }

    #[test]
    fn overlap_formula() {
        // statement tokens {alice, bob}, table tokens {player, points, alice, 1, 200, bob, 7}
        let f = extract_features("alice bob", &table());
        assert!((f.jaccard_overlap - 2.0 / 7.0).abs() < 1e-12);
        let f = extract_features("bob scored 1,200 or 8.", &table());
        // numeric {1200, 8} vs {1200, 7}
        assert!((f.numeric_overlap - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!((f.n_rows, f.n_cols), (2, 2));
    }

    #[test]
    fn masks() {
        let f = extract_features("x", &table());
        assert_eq!(f.to_vec(FeatureMask::ALL).len(), 11);
        assert_eq!(FeatureMask::ALL.slots().len(), 11);
        assert_eq!(f.to_vec(FeatureMask::NO_BIAS).len(), 4);
        assert_eq!(FeatureMask::NO_OVERLAP.slots().len(), 9);
    }
}
