use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `−Σ p ln p` with `0 · ln 0 = 0`.
pub fn predictive_entropy(probs: &[f64]) -> Result<f64> {
    if let Some(p) = probs.iter().find(|p| p.is_nan() || **p < 0.0) {
        return Err(Error::Domain(format!("probability {p} is negative or NaN")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!("probabilities sum to {total}, not 1")));
    }
    Ok(probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum::<f64>()
        .max(0.0))
}

/// Counts indexed `[true label][predicted label]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_negative: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_positive: usize,
}

impl Confusion {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u8, u8)>) -> Self {
        let mut c = Confusion::default();
        for (truth, pred) in pairs {
            c.record(truth, pred);
        }
        c
    }

    pub fn record(&mut self, truth: u8, predicted: u8) {
        match (truth, predicted) {
            (0, 0) => self.true_negative += 1,
            (0, _) => self.false_positive += 1,
            (_, 0) => self.false_negative += 1,
            _ => self.true_positive += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_negative + self.false_positive + self.false_negative + self.true_positive
    }

    /// `[[TN, FP], [FN, TP]]`.
    pub fn matrix(&self) -> [[usize; 2]; 2] {
        [
            [self.true_negative, self.false_positive],
            [self.false_negative, self.true_positive],
        ]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassMetrics {
    fn from_counts(hits: usize, predicted: usize, actual: usize) -> Self {
        let precision = ratio(hits, predicted);
        let recall = ratio(hits, actual);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support: actual,
        }
    }
}

/// Test-set metrics, fields in reporting order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub mean_entropy: f64,
    pub non_urgent: ClassMetrics,
    pub urgent: ClassMetrics,
    pub confusion: Confusion,
    pub n_test: usize,
}

impl MetricsReport {
    pub fn from_confusion(confusion: Confusion, mean_entropy: f64) -> Result<Self> {
        let n = confusion.total();
        if n == 0 {
            return Err(Error::Usage("cannot compute metrics on an empty test set".into()));
        }
        let c = confusion;
        Ok(MetricsReport {
            accuracy: (c.true_positive + c.true_negative) as f64 / n as f64,
            mean_entropy,
            non_urgent: ClassMetrics::from_counts(
                c.true_negative,
                c.true_negative + c.false_negative,
                c.true_negative + c.false_positive,
            ),
            urgent: ClassMetrics::from_counts(
                c.true_positive,
                c.true_positive + c.false_positive,
                c.true_positive + c.false_negative,
            ),
            confusion: c,
            n_test: n,
        })
    }

    /// Builds a report from `(true label, predicted label, entropy)` triples.
    pub fn from_predictions(items: &[(u8, u8, f64)]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Usage("cannot compute metrics on an empty test set".into()));
        }
        let confusion = Confusion::from_pairs(items.iter().map(|&(t, p, _)| (t, p)));
        let mean_entropy = items.iter().map(|i| i.2).sum::<f64>() / items.len() as f64;
        Self::from_confusion(confusion, mean_entropy)
    }

    pub fn class(&self, label: u8) -> &ClassMetrics {
        if label == 0 {
            &self.non_urgent
        } else {
            &self.urgent
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn entropy_examples() {
        assert!((predictive_entropy(&[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(predictive_entropy(&[1.0, 0.0]).unwrap(), 0.0);
        assert!((predictive_entropy(&[0.9, 0.1]).unwrap() - 0.325_082_973_391_448_2).abs() < 1e-12);
        assert!(matches!(predictive_entropy(&[1.2, -0.2]), Err(Error::Domain(_))));
    }

    #[test]
    fn hand_confusion() {
        let c = Confusion {
            true_positive: 3,
            false_positive: 1,
            false_negative: 1,
            true_negative: 5,
        };
        let r = MetricsReport::from_confusion(c, 0.1).unwrap();
        assert!((r.urgent.precision - 0.75).abs() < 1e-15);
        assert!((r.urgent.recall - 0.75).abs() < 1e-15);
        assert!((r.urgent.f1 - 0.75).abs() < 1e-15);
        assert!((r.accuracy - 0.8).abs() < 1e-15);
        assert_eq!(r.n_test, 10);
    }

    #[test]
    fn perfect_and_majority_classifiers() {
        let perfect: Vec<(u8, u8, f64)> = (0..10).map(|i| ((i % 3 == 0) as u8, (i % 3 == 0) as u8, 0.0)).collect();
        let r = MetricsReport::from_predictions(&perfect).unwrap();
        assert_eq!((r.accuracy, r.urgent.f1, r.non_urgent.f1), (1.0, 1.0, 1.0));

        let majority: Vec<(u8, u8, f64)> = (0..10).map(|i| (u8::from(i < 2), 0, 0.0)).collect();
        let r = MetricsReport::from_predictions(&majority).unwrap();
        assert!((r.accuracy - 0.8).abs() < 1e-15);
        assert_eq!(r.urgent.recall, 0.0);
        assert_eq!(r.urgent.precision, 0.0);
        assert_eq!(r.urgent.f1, 0.0);
    }

    #[test]
    fn empty_test_set() {
        assert!(matches!(MetricsReport::from_predictions(&[]), Err(Error::Usage(_))));
    }

    proptest! {
        #[test]
        fn entropy_bounds(p in 0.0f64..=1.0) {
            let h = predictive_entropy(&[p, 1.0 - p]).unwrap();
            prop_assert!((0.0..=2f64.ln() + 1e-15).contains(&h));
        }

        #[test]
        fn metric_identities(items in proptest::collection::vec((0u8..2, 0u8..2), 1..60)) {
            let triples: Vec<_> = items.iter().map(|&(t, p)| (t, p, 0.2)).collect();
            let r = MetricsReport::from_predictions(&triples).unwrap();
            prop_assert_eq!(r.confusion.total(), r.n_test);
            let c = r.confusion;
            prop_assert!((r.accuracy - (c.true_positive + c.true_negative) as f64 / r.n_test as f64).abs() < 1e-15);
            // accuracy is the prevalence-weighted recall
            let weighted = (r.urgent.recall * r.urgent.support as f64
                + r.non_urgent.recall * r.non_urgent.support as f64)
                / r.n_test as f64;
            prop_assert!((weighted - r.accuracy).abs() < 1e-12);
            for m in [r.urgent, r.non_urgent] {
                if m.precision + m.recall > 0.0 {
                    prop_assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() < 1e-15);
                } else {
                    prop_assert_eq!(m.f1, 0.0);
                }
            }
        }
    }
}
