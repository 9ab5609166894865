//! Binary classification metrics with metaphor as the positive class.

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::corpus::Label;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// One line of the per-epoch trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
}

/// Accuracy, precision, recall and F1 as fractions in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default)]
    pub confusion: Confusion,
    #[serde(default)]
    pub per_epoch: Vec<EpochRecord>,
}

impl MetricsReport {
    /// The four headline numbers as percentages.
    pub fn percentages(&self) -> [f64; 4] {
        [self.accuracy, self.precision, self.recall, self.f1].map(|v| 100.0 * v)
    }

    /// Field-wise mean of several reports; the per-epoch trace of the first
    /// report is kept. A single report comes back unchanged.
    pub fn mean(reports: &[MetricsReport]) -> MetricsReport {
        if let [only] = reports {
            return only.clone();
        }
        let n = reports.len().max(1) as f64;
        let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        MetricsReport {
            accuracy: avg(|r| r.accuracy),
            precision: avg(|r| r.precision),
            recall: avg(|r| r.recall),
            f1: avg(|r| r.f1),
            confusion: Confusion::default(),
            per_epoch: reports
                .first()
                .map(|r| r.per_epoch.clone())
                .unwrap_or_default(),
        }
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_from_pr(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn confusion(predictions: &[Label], gold: &[Label]) -> Result<Confusion, HarnessError> {
    if predictions.len() != gold.len() {
        return Err(HarnessError::Argument(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    if gold.is_empty() {
        return Err(HarnessError::Argument("no predictions to score".into()));
    }
    let mut c = Confusion::default();
    for (&p, &g) in predictions.iter().zip(gold) {
        match (p, g) {
            (Label::Metaphor, Label::Metaphor) => c.tp += 1,
            (Label::Metaphor, Label::Literal) => c.fp += 1,
            (Label::Literal, Label::Literal) => c.tn += 1,
            (Label::Literal, Label::Metaphor) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn compute_metrics(
    predictions: &[Label],
    gold: &[Label],
) -> Result<MetricsReport, HarnessError> {
    let c = confusion(predictions, gold)?;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    Ok(MetricsReport {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1: f1_from_pr(precision, recall),
        confusion: c,
        per_epoch: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(bits: &[u8]) -> Vec<Label> {
        bits.iter()
            .map(|&b| Label::from_index(b as usize).unwrap())
            .collect()
    }

    #[test]
    fn perfect_predictions() {
        let g = labels(&[0, 1, 1, 0, 1]);
        let m = compute_metrics(&g, &g).unwrap();
        assert_eq!([m.accuracy, m.precision, m.recall, m.f1], [1.0; 4]);
    }

    #[test]
    fn f1_of_published_pr_pair() {
        let f1 = f1_from_pr(78.7, 74.8);
        assert_eq!(format!("{f1:.1}"), "76.7");
    }

    #[test]
    fn no_positive_predictions_gives_zero_f1() {
        let m = compute_metrics(&labels(&[0, 0, 0]), &labels(&[0, 1, 0])).unwrap();
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.f1, 0.0);
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_and_empty() {
        assert!(compute_metrics(&labels(&[0]), &labels(&[0, 1])).is_err());
        assert!(compute_metrics(&[], &[]).is_err());
    }

    #[test]
    fn matches_brute_force_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        for _ in 0..50 {
            let n = rng.random_range(1..200);
            let p: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let g: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let m = compute_metrics(&labels(&p), &labels(&g)).unwrap();
            let (mut tp, mut fp, mut fneg, mut correct) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                if p[i] == g[i] {
                    correct += 1.0;
                }
                if p[i] == 1 && g[i] == 1 {
                    tp += 1.0;
                }
                if p[i] == 1 && g[i] == 0 {
                    fp += 1.0;
                }
                if p[i] == 0 && g[i] == 1 {
                    fneg += 1.0;
                }
            }
            let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rec = if tp + fneg > 0.0 {
                tp / (tp + fneg)
            } else {
                0.0
            };
            let f1 = if prec + rec > 0.0 {
                2.0 * prec * rec / (prec + rec)
            } else {
                0.0
            };
            assert!((m.accuracy - correct / n as f64).abs() < 1e-12);
            assert!((m.precision - prec).abs() < 1e-12);
            assert!((m.recall - rec).abs() < 1e-12);
            assert!((m.f1 - f1).abs() < 1e-12);
        }
    }
}
