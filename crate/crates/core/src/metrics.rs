//! Confusion matrices and support-weighted precision, recall and F1.
//!
//! Per-class scores with a zero denominator are 0. Class weights are the
//! true-class frequencies, so weighted recall reduces to accuracy; it is
//! evaluated in that cancelled form and is bit-identical to it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
}

/// `classes x classes` counts; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks_exact(self.classes.max(1))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    /// Samples of class `c`.
    pub fn support(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    /// Samples predicted as `c`.
    pub fn predicted(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }
}

pub fn confusion(truth: &[usize], predicted: &[usize], classes: usize) -> Result<ConfusionMatrix, MetricsError> {
    if truth.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        if let Some(&label) = [t, p].iter().find(|&&l| l >= classes) {
            return Err(MetricsError::LabelOutOfRange { label, classes });
        }
        cm.counts[t * classes + p] += 1;
    }
    Ok(cm)
}

/// Percentages in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn scores(cm: &ConfusionMatrix) -> Result<Scores, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let mut precision = 0.0;
    let mut f1 = 0.0;
    for c in 0..cm.classes() {
        let tp = cm.true_positives(c);
        let support = cm.support(c);
        let p = ratio(tp, cm.predicted(c));
        let r = ratio(tp, support);
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let w = support as f64 / total as f64;
        precision += w * p;
        f1 += w * f;
    }
    let accuracy = ratio(cm.trace(), total) * 100.0;
    Ok(Scores {
        accuracy,
        weighted_precision: precision * 100.0,
        // sum_c (support_c / total) * (tp_c / support_c) = trace / total
        weighted_recall: accuracy,
        weighted_f1: f1 * 100.0,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Per-class TP/FP/FN counted directly from the label vectors.
    fn brute_force(truth: &[usize], pred: &[usize], classes: usize) -> [f64; 4] {
        let n = truth.len() as f64;
        let mut out = [0.0; 4];
        out[0] = truth.iter().zip(pred).filter(|(t, p)| t == p).count() as f64 / n * 100.0;
        for c in 0..classes {
            let mut tp = 0.0;
            let mut fp = 0.0;
            let mut fn_ = 0.0;
            for (&t, &p) in truth.iter().zip(pred) {
                match (t == c, p == c) {
                    (true, true) => tp += 1.0,
                    (false, true) => fp += 1.0,
                    (true, false) => fn_ += 1.0,
                    _ => {}
                }
            }
            let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rec = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
            let w = (tp + fn_) / n;
            out[1] += w * prec * 100.0;
            out[2] += w * rec * 100.0;
            out[3] += w * f1 * 100.0;
        }
        out
    }

    #[test]
    fn hand_counted_matrix() {
        let cm = confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(cm.rows().collect::<Vec<_>>(), vec![&[1, 1][..], &[0, 2][..]]);
        let s = scores(&cm).unwrap();
        assert_eq!(s.accuracy, 75.0);
        assert!((s.weighted_f1 - 73.333_333_333).abs() < 1e-6);
    }

    #[test]
    fn perfect_and_empty() {
        let y = [0, 1, 2, 2, 1];
        let s = scores(&confusion(&y, &y, 3).unwrap()).unwrap();
        assert_eq!([s.accuracy, s.weighted_precision, s.weighted_recall, s.weighted_f1], [100.0; 4]);
        let empty = confusion(&[], &[], 3).unwrap();
        assert_eq!(empty.total(), 0);
        assert_eq!(scores(&empty), Err(MetricsError::EmptyMatrix));
        assert!(matches!(confusion(&[0], &[], 2), Err(MetricsError::LengthMismatch { .. })));
        assert!(matches!(confusion(&[0], &[3], 2), Err(MetricsError::LabelOutOfRange { label: 3, .. })));
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let classes = rng.gen_range(2..7);
            let n = rng.gen_range(1..60);
            let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
            let s = scores(&confusion(&truth, &pred, classes).unwrap()).unwrap();
            let o = brute_force(&truth, &pred, classes);
            let got = [s.accuracy, s.weighted_precision, s.weighted_recall, s.weighted_f1];
            for (a, b) in got.iter().zip(o) {
                assert!((a - b).abs() < 1e-9, "{got:?} vs {o:?}");
            }
            assert_eq!(s.weighted_recall, s.accuracy);
            assert!(got.iter().all(|v| (0.0..=100.0).contains(v)));
        }
    }

    #[test]
    fn relabelling_classes_preserves_scores() {
        let truth = [0, 1, 2, 2, 1, 0, 0];
        let pred = [0, 2, 2, 1, 1, 0, 2];
        let perm = [2, 0, 1];
        let pt: Vec<usize> = truth.iter().map(|&c| perm[c]).collect();
        let pp: Vec<usize> = pred.iter().map(|&c| perm[c]).collect();
        let a = scores(&confusion(&truth, &pred, 3).unwrap()).unwrap();
        let b = scores(&confusion(&pt, &pp, 3).unwrap()).unwrap();
        assert!((a.weighted_f1 - b.weighted_f1).abs() < 1e-12);
        assert!((a.weighted_precision - b.weighted_precision).abs() < 1e-12);
    }
}
