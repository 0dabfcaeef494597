//! In-memory labeled byte datasets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::Tensor;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DataError {
    #[error("row {row}: expected {expected} features, found {found}")]
    LengthMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },
}

/// Fixed-length byte samples with class labels, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    feature_len: usize,
    class_names: Vec<String>,
    features: Vec<u8>,
    labels: Vec<u32>,
}

impl Dataset {
    pub fn new(feature_len: usize, class_names: Vec<String>) -> Self {
        Self {
            feature_len,
            class_names,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, features: &[u8], label: usize) -> Result<(), DataError> {
        let row = self.len();
        if features.len() != self.feature_len {
            return Err(DataError::LengthMismatch {
                row,
                expected: self.feature_len,
                found: features.len(),
            });
        }
        if label >= self.num_classes() {
            return Err(DataError::LabelOutOfRange {
                row,
                label,
                classes: self.num_classes(),
            });
        }
        self.features.extend_from_slice(features);
        self.labels.push(label as u32);
        Ok(())
    }

    pub fn feature_len(&self) -> usize {
        self.feature_len
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.features[i * self.feature_len..(i + 1) * self.feature_len]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.iter().map(|&l| l as usize)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for l in self.labels() {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.feature_len, self.class_names.clone());
        out.features.reserve(indices.len() * self.feature_len);
        for &i in indices {
            out.features.extend_from_slice(self.row(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    /// `[indices.len(), feature_len]` tensor of bytes scaled to `[0, 1]`.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.feature_len);
        for &i in indices {
            data.extend(self.row(i).iter().map(|&b| b as f64 / 255.0));
        }
        Tensor::from_vec(&[indices.len(), self.feature_len], data)
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.label(i)).collect()
    }
}

/// Balanced classes whose bytes are drawn uniformly from disjoint bands
/// `[c·256/k + 8, (c+1)·256/k − 8)`, so the mean byte value separates them.
pub fn synthetic_separable(samples: usize, feature_len: usize, num_classes: usize, seed: u64) -> Dataset {
    assert!((2..=16).contains(&num_classes), "band layout supports 2..=16 classes");
    let names = (0..num_classes).map(|c| format!("class{c}")).collect();
    let mut data = Dataset::new(feature_len, names);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let band = 256 / num_classes;
    let mut row = vec![0u8; feature_len];
    for i in 0..samples {
        let label = i % num_classes;
        let lo = label * band + 8;
        let hi = (label + 1) * band - 8;
        for b in row.iter_mut() {
            *b = rng.gen_range(lo..hi) as u8;
        }
        data.push(&row, label).expect("generated rows are well-formed");
    }
    data
}


/// Per-class indices divided into a first and second part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratifiedSplit {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
    /// Classes with no samples.
    pub empty_classes: Vec<usize>,
    /// Classes whose smaller part is expected to hold fewer than one sample.
    pub small_classes: Vec<usize>,
}

/// Stratified seeded split: a class of `n ≥ 2` samples puts
/// `min(round(fraction·n), n − 1)` into the first part, a singleton goes to
/// the first part. Both parts list indices in ascending order.
pub fn stratified_split(data: &Dataset, fraction: f64, seed: u64) -> StratifiedSplit {
    assert!((0.0..=1.0).contains(&fraction));
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes()];
    for (i, l) in data.labels().enumerate() {
        by_class[l].push(i);
    }
    let mut out = StratifiedSplit {
        first: Vec::new(),
        second: Vec::new(),
        empty_classes: Vec::new(),
        small_classes: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (class, mut members) in by_class.into_iter().enumerate() {
        let n = members.len();
        if n == 0 {
            out.empty_classes.push(class);
            continue;
        }
        let take = if n == 1 {
            1
        } else {
            ((fraction * n as f64).round() as usize).min(n - 1)
        };
        let second = n - take;
        // The smaller part is expected to hold under one sample.
        if second == 0 || take == 0 || (n as f64) * fraction.min(1.0 - fraction) < 1.0 - 1e-9 {
            out.small_classes.push(class);
        }
        members.shuffle(&mut rng);
        out.first.extend_from_slice(&members[..take]);
        out.second.extend_from_slice(&members[take..]);
    }
    out.first.sort_unstable();
    out.second.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_checks_length_and_label() {
        let mut d = Dataset::new(3, vec!["a".into(), "b".into()]);
        d.push(&[1, 2, 3], 1).unwrap();
        assert_eq!(
            d.push(&[1, 2], 0),
            Err(DataError::LengthMismatch {
                row: 1,
                expected: 3,
                found: 2
            })
        );
        assert!(matches!(d.push(&[0; 3], 2), Err(DataError::LabelOutOfRange { .. })));
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn synthetic_bands_do_not_overlap() {
        let d = synthetic_separable(200, 16, 2, 1);
        assert_eq!(d.class_counts(), vec![100, 100]);
        for i in 0..d.len() {
            let max = *d.row(i).iter().max().unwrap();
            let min = *d.row(i).iter().min().unwrap();
            if d.label(i) == 0 {
                assert!(max < 120);
            } else {
                assert!(min >= 136);
            }
        }
    }

    #[test]
    fn batch_scales_bytes() {
        let mut d = Dataset::new(2, vec!["x".into()]);
        d.push(&[0, 255], 0).unwrap();
        let t = d.batch(&[0, 0]);
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn stratified_split_rounds_per_class() {
        let d = synthetic_separable(100, 4, 2, 0);
        let s = stratified_split(&d, 0.8, 3);
        assert_eq!((s.first.len(), s.second.len()), (80, 20));
        assert_eq!(d.subset(&s.first).class_counts(), vec![40, 40]);
        assert_eq!(s, stratified_split(&d, 0.8, 3));
        assert_ne!(s.first, stratified_split(&d, 0.8, 4).first);
        assert!(s.small_classes.is_empty());

        let mut tiny = Dataset::new(1, vec!["a".into(), "b".into(), "c".into()]);
        for l in [0, 0, 0, 1, 1, 1, 1, 1] {
            tiny.push(&[0], l).unwrap();
        }
        let s = stratified_split(&tiny, 0.8, 0);
        assert_eq!((s.first.len(), s.second.len()), (6, 2));
        assert_eq!(s.empty_classes, vec![2]);
        assert_eq!(s.small_classes, vec![0]);
    }
}
