//! Gradient-boosted regression trees over integer-encoded decision sequences.

use serde::{Deserialize, Serialize};

use super::ControllerError;
use crate::space::DecisionSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostingConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
}

impl Default for BoostingConfig {
    fn default() -> Self {
        Self {
            trees: 50,
            max_depth: 3,
            shrinkage: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tree {
    Leaf(f64),
    /// Goes left when `x[feature] <= threshold`.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Tree>,
        right: Box<Tree>,
    },
}

impl Tree {
    fn predict(&self, x: &[usize]) -> f64 {
        match self {
            Tree::Leaf(v) => *v,
            Tree::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if x[*feature] as f64 <= *threshold {
                    left.predict(x)
                } else {
                    right.predict(x)
                }
            }
        }
    }
}

/// Squared-error boosting ensemble; predictions are clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    base: f64,
    shrinkage: f64,
    trees: Vec<Tree>,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn mean(idx: &[usize], y: &[f64]) -> f64 {
    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
}

/// Best variance-reducing split of the rows `idx`, if any reduces it.
fn best_split(xs: &[&[usize]], y: &[f64], idx: &[usize]) -> Option<Split> {
    let features = xs[idx[0]].len();
    let total: f64 = idx.iter().map(|&i| y[i]).sum();
    let n = idx.len() as f64;
    let mut best: Option<Split> = None;
    let mut order = idx.to_vec();
    for f in 0..features {
        order.sort_by_key(|&i| xs[i][f]);
        let mut left_sum = 0.0;
        for k in 0..order.len() - 1 {
            left_sum += y[order[k]];
            let (a, b) = (xs[order[k]][f], xs[order[k + 1]][f]);
            if a == b {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = n - nl;
            let right_sum = total - left_sum;
            // Reduction in squared error relative to a single leaf.
            let gain = left_sum * left_sum / nl + right_sum * right_sum / nr - total * total / n;
            if gain > 1e-15 && best.as_ref().is_none_or(|s| gain > s.gain) {
                best = Some(Split {
                    feature: f,
                    threshold: (a as f64 + b as f64) / 2.0,
                    gain,
                });
            }
        }
    }
    best
}

fn grow(xs: &[&[usize]], y: &[f64], idx: &[usize], depth: usize) -> Tree {
    if depth == 0 || idx.len() < 2 {
        return Tree::Leaf(mean(idx, y));
    }
    match best_split(xs, y, idx) {
        None => Tree::Leaf(mean(idx, y)),
        Some(s) => {
            let (l, r): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| xs[i][s.feature] as f64 <= s.threshold);
            Tree::Split {
                feature: s.feature,
                threshold: s.threshold,
                left: Box::new(grow(xs, y, &l, depth - 1)),
                right: Box::new(grow(xs, y, &r, depth - 1)),
            }
        }
    }
}

impl Surrogate {
    pub fn fit(pairs: &[(DecisionSequence, f64)], cfg: &BoostingConfig) -> Result<Self, ControllerError> {
        if pairs.len() < 2 {
            return Err(ControllerError::InsufficientData { found: pairs.len() });
        }
        let xs: Vec<&[usize]> = pairs.iter().map(|(s, _)| s.as_slice()).collect();
        let y: Vec<f64> = pairs.iter().map(|(_, r)| *r).collect();
        let base = y.iter().sum::<f64>() / y.len() as f64;
        let mut pred = vec![base; y.len()];
        let idx: Vec<usize> = (0..y.len()).collect();
        let mut trees = Vec::with_capacity(cfg.trees);
        for _ in 0..cfg.trees {
            let residual: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
            let tree = grow(&xs, &residual, &idx, cfg.max_depth);
            for (p, x) in pred.iter_mut().zip(&xs) {
                *p += cfg.shrinkage * tree.predict(x);
            }
            trees.push(tree);
        }
        Ok(Self {
            base,
            shrinkage: cfg.shrinkage,
            trees,
        })
    }

    /// Unclamped ensemble output.
    pub fn raw(&self, seq: &DecisionSequence) -> f64 {
        self.base
            + self.shrinkage * self.trees.iter().map(|t| t.predict(seq.as_slice())).sum::<f64>()
    }

    pub fn predict(&self, seq: &DecisionSequence) -> f64 {
        self.raw(seq).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_pairs(n: usize, target: impl Fn(&[usize]) -> f64) -> Vec<(DecisionSequence, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (0..n)
            .map(|_| {
                let s: Vec<usize> = (0..6).map(|_| rng.gen_range(0..5)).collect();
                let y = target(&s);
                (DecisionSequence(s), y)
            })
            .collect()
    }

    #[test]
    fn constant_target_is_reproduced() {
        let pairs = random_pairs(30, |_| 0.42);
        let m = Surrogate::fit(&pairs, &BoostingConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let s = DecisionSequence((0..6).map(|_| rng.gen_range(0..5)).collect());
            assert!((m.predict(&s) - 0.42).abs() < 1e-12);
        }
    }

    #[test]
    fn single_position_linear_target_is_fit() {
        let pairs = random_pairs(200, |s| 0.1 + 0.2 * s[3] as f64);
        let m = Surrogate::fit(&pairs, &BoostingConfig::default()).unwrap();
        let mse = pairs.iter().map(|(s, y)| (m.raw(s) - y).powi(2)).sum::<f64>() / pairs.len() as f64;
        assert!(mse < 0.01, "mse {mse}");
    }

    #[test]
    fn predictions_are_clamped() {
        let pairs = random_pairs(50, |s| if s[0] > 2 { 1.0 } else { 0.0 });
        let m = Surrogate::fit(&pairs, &BoostingConfig { shrinkage: 1.5, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let s = DecisionSequence((0..6).map(|_| rng.gen_range(0..5)).collect());
            assert!((0.0..=1.0).contains(&m.predict(&s)));
        }
    }

    #[test]
    fn needs_two_pairs() {
        let pairs = random_pairs(1, |_| 0.5);
        assert_eq!(
            Surrogate::fit(&pairs, &BoostingConfig::default()),
            Err(ControllerError::InsufficientData { found: 1 })
        );
    }
}
