//! Answer metrics, bootstrap intervals, classifier and agreement statistics,
//! and the artifact-detector feature pipeline.

pub mod classifier;
pub mod features;

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_from_seed;
use crate::table::{normalize_text, GroundingConfig};

pub use classifier::{
    classifier_metrics, cohen_kappa, predict, train_linear, ClassifierMetrics, LinearModel,
    TrainConfig,
};
pub use features::{extract_features, ArtifactFeatures, FeatureMask, BIAS_WORDS};

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("both classes are required")]
    SingleClass,
    #[error("chance agreement is 1; kappa is undefined")]
    DegenerateMarginals,
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
}

/// Answer normalization for EM/F1: casefold, punctuation strip, article strip.
pub fn normalize_answer(s: &str) -> String {
    normalize_text(s, &GroundingConfig::exact())
}

pub fn em(pred: &str, gold: &[String]) -> f64 {
    let p = normalize_answer(pred);
    if gold.iter().any(|g| normalize_answer(g) == p) {
        1.0
    } else {
        0.0
    }
}

fn bag_f1(pred: &str, gold: &str) -> f64 {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, isize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut common = 0;
    for t in &p {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Token-bag F1, maximized over gold answers.
pub fn token_f1(pred: &str, gold: &[String]) -> f64 {
    let p = normalize_answer(pred);
    gold.iter()
        .map(|g| bag_f1(&p, &normalize_answer(g)))
        .fold(0.0, f64::max)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> Option<[f64; 2]> {
    if values.is_empty() || resamples == 0 {
        return None;
    }
    let n = values.len();
    if values.iter().all(|&v| v == values[0]) {
        return Some([values[0]; 2]);
    }
    let mut rng = rng_from_seed(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Some([quantile(&means, alpha), quantile(&means, 1.0 - alpha)])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub em: f64,
    pub f1: f64,
    pub n: usize,
    pub ci_em: [f64; 2],
    pub ci_f1: [f64; 2],
}

impl MetricBlock {
    /// Means with 95% bootstrap intervals. Intervals are widened to include
    /// the point estimate when resampling noise leaves it outside.
    pub fn compute(em: &[f64], f1: &[f64], resamples: usize, seed: u64) -> Option<MetricBlock> {
        let (m_em, m_f1) = (mean(em)?, mean(f1)?);
        let widen = |ci: [f64; 2], p: f64| [ci[0].min(p), ci[1].max(p)];
        let ci_em = bootstrap_ci(em, resamples, DEFAULT_LEVEL, seed)?;
        let ci_f1 = bootstrap_ci(f1, resamples, DEFAULT_LEVEL, seed.wrapping_add(1))?;
        Some(MetricBlock {
            em: m_em,
            f1: m_f1,
            n: em.len(),
            ci_em: widen(ci_em, m_em),
            ci_f1: widen(ci_f1, m_f1),
        })
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "em" => Some(self.em),
            "f1" => Some(self.f1),
            _ => None,
        }
    }
}

/// Per-example EM and F1 keyed by id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub em: f64,
    pub f1: f64,
}

pub fn score(pred: &str, gold: &[String]) -> ExampleScore {
    ExampleScore {
        em: em(pred, gold),
        f1: token_f1(pred, gold),
    }
}

/// Block over id-ordered scores.
pub fn block_of(scores: &BTreeMap<String, ExampleScore>, seed: u64) -> Option<MetricBlock> {
    let em: Vec<f64> = scores.values().map(|s| s.em).collect();
    let f1: Vec<f64> = scores.values().map(|s| s.f1).collect();
    MetricBlock::compute(&em, &f1, DEFAULT_RESAMPLES, seed)
}
