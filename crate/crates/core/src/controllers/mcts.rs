use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BoostingConfig, Controller, ControllerError, Strategy, Surrogate, TrialRecord};
use crate::space::DecisionSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MctsConfig {
    pub exploration: f64,
    pub max_children: usize,
    pub rollout_samples: usize,
    /// Observations between surrogate refits.
    pub refit_every: usize,
    pub boosting: BoostingConfig,
}

impl Default for MctsConfig {
    fn default() -> Self {
        Self {
            exploration: std::f64::consts::SQRT_2,
            max_children: 10,
            rollout_samples: 10,
            refit_every: 10,
            boosting: BoostingConfig::default(),
        }
    }
}

/// A decision prefix. The root is the empty prefix; a node at depth `d`
/// fixes positions `0..d`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub depth: usize,
    pub visits: u64,
    pub total: f64,
    /// `(value, node index)` in expansion order.
    pub children: Vec<(usize, usize)>,
    /// Candidate values not yet expanded; `None` until first visited.
    untried: Option<Vec<usize>>,
}

impl TreeNode {
    fn new(depth: usize) -> Self {
        Self {
            depth,
            visits: 0,
            total: 0.0,
            children: Vec::new(),
            untried: None,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.total / self.visits as f64
        }
    }
}

/// UCT tree search over decision prefixes; unexplored suffixes are completed
/// by the best surrogate-scored of several uniform completions.
#[derive(Debug, Clone)]
pub struct Mcts {
    arities: Vec<usize>,
    cfg: MctsConfig,
    nodes: Vec<TreeNode>,
    pending: VecDeque<(DecisionSequence, Vec<usize>)>,
    observed: Vec<(DecisionSequence, f64)>,
    surrogate: Option<Surrogate>,
}

impl Mcts {
    pub fn new(arities: &[usize], cfg: MctsConfig) -> Self {
        assert!(cfg.max_children >= 1 && cfg.rollout_samples >= 1 && cfg.refit_every >= 1);
        Self {
            arities: arities.to_vec(),
            cfg,
            nodes: vec![TreeNode::new(0)],
            pending: VecDeque::new(),
            observed: Vec::new(),
            surrogate: None,
        }
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn node(&self, index: usize) -> &TreeNode {
        &self.nodes[index]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn surrogate(&self) -> Option<&Surrogate> {
        self.surrogate.as_ref()
    }

    fn ensure_candidates(&mut self, idx: usize, rng: &mut ChaCha8Rng) {
        if self.nodes[idx].untried.is_some() {
            return;
        }
        let arity = self.arities[self.nodes[idx].depth];
        let mut values: Vec<usize> = (0..arity).collect();
        if arity > self.cfg.max_children {
            values.shuffle(rng);
            values.truncate(self.cfg.max_children);
            values.sort_unstable();
        }
        self.nodes[idx].untried = Some(values);
    }

    fn uct_child(&self, idx: usize) -> usize {
        let parent = &self.nodes[idx];
        let ln_n = (parent.visits.max(1) as f64).ln();
        let score = |child: &TreeNode| {
            if child.visits == 0 {
                f64::INFINITY
            } else {
                child.mean() + self.cfg.exploration * (ln_n / child.visits as f64).sqrt()
            }
        };
        parent
            .children
            .iter()
            .map(|&(_, c)| c)
            .reduce(|a, b| if score(&self.nodes[b]) > score(&self.nodes[a]) { b } else { a })
            .expect("node has children")
    }

    /// Best of `rollout_samples` uniform completions of `prefix` by surrogate
    /// score; the first draw when no surrogate is fitted yet.
    fn rollout(&self, prefix: &[usize], rng: &mut ChaCha8Rng) -> DecisionSequence {
        let tail = &self.arities[prefix.len()..];
        let mut best: Option<(f64, DecisionSequence)> = None;
        for _ in 0..self.cfg.rollout_samples {
            let mut s = prefix.to_vec();
            s.extend(tail.iter().map(|&n| rng.gen_range(0..n)));
            let s = DecisionSequence(s);
            let Some(model) = &self.surrogate else {
                return s;
            };
            let score = model.predict(&s);
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, s));
            }
        }
        best.expect("at least one sample").1
    }
}

impl Controller for Mcts {
    fn strategy(&self) -> Strategy {
        Strategy::Mcts
    }

    fn propose(&mut self, rng: &mut ChaCha8Rng) -> DecisionSequence {
        let depth_max = self.arities.len();
        let mut idx = 0;
        let mut path = vec![0];
        let mut prefix = Vec::with_capacity(depth_max);
        while self.nodes[idx].depth < depth_max {
            self.ensure_candidates(idx, rng);
            let untried = self.nodes[idx].untried.as_mut().expect("filled");
            if !untried.is_empty() {
                let value = untried.swap_remove(rng.gen_range(0..untried.len()));
                let child = self.nodes.len();
                let depth = self.nodes[idx].depth + 1;
                self.nodes.push(TreeNode::new(depth));
                self.nodes[idx].children.push((value, child));
                prefix.push(value);
                path.push(child);
                break;
            }
            let child = self.uct_child(idx);
            let value = self.nodes[idx]
                .children
                .iter()
                .find(|&&(_, c)| c == child)
                .expect("child of idx")
                .0;
            prefix.push(value);
            path.push(child);
            idx = child;
        }
        let seq = self.rollout(&prefix, rng);
        self.pending.push_back((seq.clone(), path));
        seq
    }

    fn observe(&mut self, record: &TrialRecord) -> Result<(), ControllerError> {
        let path = match self.pending.front() {
            Some((seq, _)) if *seq == record.sequence => self.pending.pop_front().expect("front").1,
            front => {
                return Err(ControllerError::OutOfOrderObservation {
                    expected: front.map_or_else(|| "none".to_string(), |(s, _)| s.to_string()),
                    found: record.sequence.to_string(),
                })
            }
        };
        for idx in path {
            let node = &mut self.nodes[idx];
            node.visits += 1;
            node.total += record.reward;
        }
        self.observed.push((record.sequence.clone(), record.reward));
        if self.observed.len().is_multiple_of(self.cfg.refit_every) {
            self.surrogate = Surrogate::fit(&self.observed, &self.cfg.boosting).ok();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    const ARITIES: [usize; 8] = [1, 5, 1, 5, 2, 5, 2, 5];

    #[test]
    fn first_proposal_expands_the_root() {
        let mut m = Mcts::new(&ARITIES, MctsConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let seq = m.propose(&mut rng);
        assert_eq!(m.nodes().len(), 2);
        assert_eq!(m.root().children, vec![(seq.0[0], 1)]);
        assert_eq!(m.node(1).visits, 0);
    }

    #[test]
    fn visits_and_means_are_exact() {
        let mut m = Mcts::new(&ARITIES, MctsConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sums = vec![(0u64, 0.0f64); 0];
        for i in 0..300 {
            let seq = m.propose(&mut rng);
            let path = m.pending.back().unwrap().1.clone();
            let reward = ((i * 7919) % 101) as f64 / 100.0;
            m.observe(&TrialRecord::scored(i, seq, reward)).unwrap();
            sums.resize(m.nodes().len(), (0, 0.0));
            for idx in path {
                sums[idx].0 += 1;
                sums[idx].1 += reward;
            }
        }
        assert_eq!(m.root().visits, 300);
        for (idx, node) in m.nodes().iter().enumerate() {
            assert_eq!(node.visits, sums[idx].0);
            if node.visits > 0 {
                assert!((node.mean() - sums[idx].1 / sums[idx].0 as f64).abs() < 1e-12);
            }
            let child_visits: u64 = node.children.iter().map(|&(_, c)| m.node(c).visits).sum();
            assert!(child_visits <= node.visits);
            if node.depth < ARITIES.len() {
                assert!(node.children.len() <= ARITIES[node.depth].min(10));
            }
        }
    }

    #[test]
    fn wide_positions_keep_at_most_ten_children() {
        let arities = [40, 3];
        let mut m = Mcts::new(&arities, MctsConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..200 {
            let seq = m.propose(&mut rng);
            m.observe(&TrialRecord::scored(i, seq, 0.3)).unwrap();
        }
        assert_eq!(m.root().children.len(), 10);
    }

    #[test]
    fn out_of_order_is_rejected() {
        let mut m = Mcts::new(&ARITIES, MctsConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let _a = m.propose(&mut rng);
        let stray = DecisionSequence(vec![9; ARITIES.len()]);
        assert!(m.observe(&TrialRecord::scored(0, stray, 0.1)).is_err());
    }
}
