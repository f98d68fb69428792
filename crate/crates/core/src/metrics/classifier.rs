use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    /// Accuracy with the decision threshold at 0.5.
    pub accuracy: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub pos_rate: f64,
}

/// Midranks (1-based) of `scores`; tied scores share their average rank.
fn midranks(scores: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Average precision with one threshold per distinct score.
fn average_precision(scores: &[f64], labels: &[bool], n_pos: usize) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let group_tp = idx[i..=j].iter().filter(|&&k| labels[k]).count();
        tp += group_tp;
        seen += j - i + 1;
        ap += (group_tp as f64 / n_pos as f64) * (tp as f64 / seen as f64);
        i = j + 1;
    }
    ap
}

pub fn classifier_metrics(scores: &[f64], labels: &[bool]) -> Result<ClassifierMetrics, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let ranks = midranks(scores);
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    let auroc = u / (n_pos * n_neg) as f64;
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= 0.5) == l)
        .count();
    Ok(ClassifierMetrics {
        accuracy: correct as f64 / labels.len() as f64,
        auroc,
        auprc: average_precision(scores, labels, n_pos),
        pos_rate: n_pos as f64 / labels.len() as f64,
    })
}

/// Cohen's kappa between two aligned labelings.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let mut ma: BTreeMap<&T, f64> = BTreeMap::new();
    let mut mb: BTreeMap<&T, f64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *ma.entry(x).or_default() += 1.0;
        *mb.entry(y).or_default() += 1.0;
    }
    let p_o = agree / n;
    let p_e: f64 = ma
        .iter()
        .map(|(k, ca)| ca / n * mb.get(k).copied().unwrap_or(0.0) / n)
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(MetricsError::DegenerateMarginals);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            epochs: 500,
            seed: 0,
        }
    }
}

/// Logistic regression over standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub slots: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub trained_on: String,
    pub epochs: usize,
    pub lr: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LinearModel {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        let z: f64 = self
            .standardize(x)
            .iter()
            .zip(&self.weights)
            .map(|(a, w)| a * w)
            .sum();
        sigmoid(z + self.bias)
    }
}

/// Full-batch gradient descent on the logistic loss. Weights start at small
/// seeded values; every step visits examples in input order.
pub fn train_linear(
    features: &[Vec<f64>],
    labels: &[bool],
    slots: &[String],
    cfg: TrainConfig,
    trained_on: &str,
) -> Result<LinearModel, MetricsError> {
    if features.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(features.len(), labels.len()));
    }
    if features.is_empty() {
        return Err(MetricsError::Empty);
    }
    let d = slots.len();
    let n = features.len() as f64;
    let mut mean = vec![0.0; d];
    for x in features {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; d];
    for x in features {
        for ((s, v), m) in scale.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut scale {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }
    let mut rng = rng_from_seed(cfg.seed);
    let mut model = LinearModel {
        slots: slots.to_vec(),
        weights: (0..d).map(|_| rng.gen_range(-0.01..0.01)).collect(),
        bias: 0.0,
        mean,
        scale,
        trained_on: trained_on.to_owned(),
        epochs: cfg.epochs,
        lr: cfg.lr,
    };
    let xs: Vec<Vec<f64>> = features.iter().map(|x| model.standardize(x)).collect();
    for _ in 0..cfg.epochs {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(labels) {
            let z: f64 = x.iter().zip(&model.weights).map(|(a, w)| a * w).sum::<f64>() + model.bias;
            let err = sigmoid(z) - f64::from(u8::from(y));
            for (g, a) in gw.iter_mut().zip(x) {
                *g += err * a;
            }
            gb += err;
        }
        for (w, g) in model.weights.iter_mut().zip(&gw) {
            *w -= cfg.lr * g / n;
        }
        model.bias -= cfg.lr * gb / n;
    }
    Ok(model)
}

pub fn predict(model: &LinearModel, features: &[Vec<f64>]) -> Vec<f64> {
    features.iter().map(|x| model.score(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn auroc_examples() {
        let m = classifier_metrics(&[0.9, 0.1], &[true, false]).unwrap();
        assert_eq!(m.auroc, 1.0);
        assert_eq!(m.auprc, 1.0);
        assert_eq!(m.accuracy, 1.0);
        let m = classifier_metrics(&[0.3; 4], &[true, false, true, false]).unwrap();
        assert_eq!(m.auroc, 0.5);
        assert_eq!(m.pos_rate, 0.5);
        assert_eq!(classifier_metrics(&[0.2, 0.4], &[true, true]), Err(MetricsError::SingleClass));
    }

    #[test]
    fn average_precision_by_hand() {
        // order: 0.8(+) 0.6(-) 0.4(+) 0.2(-) => AP = 0.5*1 + 0.5*(2/3)
        let m = classifier_metrics(&[0.8, 0.6, 0.4, 0.2], &[true, false, true, false]).unwrap();
        assert!((m.auprc - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
        assert!((m.auroc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn kappa_examples() {
        assert_eq!(cohen_kappa(&["x", "y", "x", "y"], &["x", "y", "x", "y"]), Ok(1.0));
        // p_o = 0.5; marginals 0.5/0.5 on both sides so p_e = 0.5
        assert_eq!(cohen_kappa(&["x", "x", "y", "y"], &["x", "y", "x", "y"]), Ok(0.0));
        assert_eq!(cohen_kappa(&["x", "x"], &["x", "x"]), Err(MetricsError::DegenerateMarginals));
    }

    #[test]
    fn kappa_independent_labelings_average_zero() {
        let mut rng = rng_from_seed(17);
        let mut total = 0.0;
        for _ in 0..1000 {
            let a: Vec<bool> = (0..100).map(|_| rng.gen_bool(0.5)).collect();
            let b: Vec<bool> = (0..100).map(|_| rng.gen_bool(0.5)).collect();
            total += cohen_kappa(&a, &b).unwrap();
        }
        assert!((total / 1000.0).abs() < 0.01);
    }

    #[test]
    fn separable_fixture_fits() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let ys: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let slots = vec!["a".to_string(), "b".to_string()];
        let m = train_linear(&xs, &ys, &slots, TrainConfig::default(), "fixture").unwrap();
        let acc = classifier_metrics(&predict(&m, &xs), &ys).unwrap().accuracy;
        assert_eq!(acc, 1.0);
        let again = train_linear(&xs, &ys, &slots, TrainConfig::default(), "fixture").unwrap();
        assert_eq!(m, again);
    }

    proptest! {
        #[test]
        fn auroc_invariant_under_monotone_maps(
            pairs in proptest::collection::vec((0u8..20, any::<bool>()), 2..40)
        ) {
            let labels: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let s: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let t: Vec<f64> = s.iter().map(|x| (x * 0.3).exp() + 7.0).collect();
            let a = classifier_metrics(&s, &labels).unwrap();
            let b = classifier_metrics(&t, &labels).unwrap();
            prop_assert!((a.auroc - b.auroc).abs() < 1e-12);
            prop_assert!((a.auprc - b.auprc).abs() < 1e-12);
        }

        #[test]
        fn kappa_symmetric_and_self_one(a in proptest::collection::vec(0u8..3, 2..30), b in proptest::collection::vec(0u8..3, 2..30)) {
            let n = a.len().min(b.len());
            let (a, b) = (&a[..n], &b[..n]);
            if let (Ok(x), Ok(y)) = (cohen_kappa(a, b), cohen_kappa(b, a)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            if a.iter().any(|v| *v != a[0]) {
                prop_assert!((cohen_kappa(a, a).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }
}
