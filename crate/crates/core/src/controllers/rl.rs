use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Controller, ControllerError, Strategy, TrialRecord};
use crate::engine::{AdamState, PolicyNet, LSTM_UNITS};
use crate::space::DecisionSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RlConfig {
    pub hidden: usize,
    pub lr: f64,
    pub baseline_decay: f64,
    pub clip: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            hidden: LSTM_UNITS,
            lr: 1e-3,
            baseline_decay: 0.999,
            clip: 5.0,
        }
    }
}

/// REINFORCE with a moving-average baseline, one policy update per trial.
#[derive(Debug, Clone)]
pub struct Reinforce {
    cfg: RlConfig,
    policy: PolicyNet,
    adam: AdamState,
    baseline: f64,
    pending: VecDeque<DecisionSequence>,
}

impl Reinforce {
    pub fn new(arities: &[usize], cfg: RlConfig, seed: u64) -> Self {
        let policy = PolicyNet::new(arities, cfg.hidden, seed);
        let adam = AdamState::for_shapes(policy.params().iter().map(|t| t.shape()));
        Self {
            cfg,
            policy,
            adam,
            baseline: 0.0,
            pending: VecDeque::new(),
        }
    }

    pub fn policy(&self) -> &PolicyNet {
        &self.policy
    }

    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn set_baseline(&mut self, baseline: f64) {
        self.baseline = baseline;
    }

    /// Pre-clip gradient norm of the update.
    fn update(&mut self, seq: &DecisionSequence, reward: f64) -> f64 {
        let d = self.cfg.baseline_decay;
        self.baseline = d * self.baseline + (1.0 - d) * reward;
        let advantage = reward - self.baseline;
        let (_, mut grads) = self.policy.log_prob_grads(seq.as_slice());
        // Adam minimises; ascend on advantage * log p.
        grads.scale(-advantage);
        let norm = grads.clip(self.cfg.clip);
        self.adam.update(self.policy.params_mut().iter_mut(), &grads.0, self.cfg.lr);
        norm
    }
}

impl Controller for Reinforce {
    fn strategy(&self) -> Strategy {
        Strategy::Rl
    }

    fn propose(&mut self, rng: &mut ChaCha8Rng) -> DecisionSequence {
        let seq = DecisionSequence(self.policy.sample(rng).choices);
        self.pending.push_back(seq.clone());
        seq
    }

    fn observe(&mut self, record: &TrialRecord) -> Result<(), ControllerError> {
        match self.pending.front() {
            Some(front) if *front == record.sequence => {
                self.pending.pop_front();
                self.update(&record.sequence, record.reward);
                Ok(())
            }
            front => Err(ControllerError::OutOfOrderObservation {
                expected: front.map_or_else(|| "none".to_string(), |s| s.to_string()),
                found: record.sequence.to_string(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    const ARITIES: [usize; 4] = [1, 5, 2, 5];

    fn small() -> RlConfig {
        RlConfig {
            hidden: 8,
            ..Default::default()
        }
    }

    #[test]
    fn baseline_tracks_constant_reward() {
        let mut rl = Reinforce::new(&ARITIES, small(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = 0.8;
        for i in 0..5000 {
            let seq = rl.propose(&mut rng);
            rl.observe(&TrialRecord::scored(i, seq, r)).unwrap();
        }
        // b_n = r (1 - 0.999^n)
        let oracle = r * (1.0 - 0.999f64.powi(5000));
        assert!((rl.baseline() - oracle).abs() < 1e-9);
        assert!((rl.baseline() - r).abs() < 0.01 * r);
    }

    #[test]
    fn update_direction_follows_advantage() {
        for (baseline, reward, up) in [(0.0, 0.9, true), (0.9, 0.1, false)] {
            let mut rl = Reinforce::new(&ARITIES, small(), 5);
            rl.set_baseline(baseline);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let seq = rl.propose(&mut rng);
            let before = rl.policy().log_prob(seq.as_slice());
            rl.observe(&TrialRecord::scored(0, seq.clone(), reward)).unwrap();
            let after = rl.policy().log_prob(seq.as_slice());
            assert_eq!(after > before, up, "{before} -> {after}");
            assert_ne!(after, before);
        }
    }

    #[test]
    fn rejects_unproposed_sequence() {
        let mut rl = Reinforce::new(&ARITIES, small(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rl.propose(&mut rng);
        let _b = rl.propose(&mut rng);
        let other = DecisionSequence(vec![0, (a.0[1] + 1) % 5, a.0[2], a.0[3]]);
        assert!(matches!(
            rl.observe(&TrialRecord::scored(0, other, 0.5)),
            Err(ControllerError::OutOfOrderObservation { .. })
        ));
        assert!(rl.observe(&TrialRecord::scored(0, a, 0.5)).is_ok());
    }

    #[test]
    fn clipped_update_norm_is_bounded() {
        let mut rl = Reinforce::new(&ARITIES, small(), 2);
        let seq = DecisionSequence(vec![0, 1, 1, 4]);
        let (_, g) = rl.policy.log_prob_grads(seq.as_slice());
        let norm = rl.update(&seq, 1.0);
        assert!((norm - 0.999 * g.global_norm()).abs() < 1e-9);
    }
}
