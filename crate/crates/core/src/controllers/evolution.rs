use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Controller, ControllerError, Strategy, TrialRecord};
use crate::space::{sample_uniform, DecisionSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population: usize,
    pub tournament: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population: 20,
            tournament: 5,
        }
    }
}

/// Aging evolution: a FIFO population, tournament parent selection and
/// single-position mutation. The oldest individual dies on every insertion
/// beyond capacity, whatever its reward.
#[derive(Debug, Clone)]
pub struct Evolution {
    arities: Vec<usize>,
    cfg: EvolutionConfig,
    population: VecDeque<(DecisionSequence, f64)>,
    /// Positions with more than one value; the only ones mutation can change.
    mutable: Vec<usize>,
}

impl Evolution {
    pub fn new(arities: &[usize], cfg: EvolutionConfig) -> Self {
        assert!(cfg.population >= 1 && cfg.tournament >= 1);
        Self {
            arities: arities.to_vec(),
            mutable: (0..arities.len()).filter(|&p| arities[p] > 1).collect(),
            population: VecDeque::with_capacity(cfg.population + 1),
            cfg,
        }
    }

    /// Oldest first.
    pub fn population(&self) -> impl Iterator<Item = &(DecisionSequence, f64)> {
        self.population.iter()
    }

    pub fn best_reward(&self) -> Option<f64> {
        self.population.iter().map(|(_, r)| *r).max_by(f64::total_cmp)
    }

    /// Best of a uniform sample of `tournament` distinct members; ties go to
    /// the older member.
    fn select_parent(&self, rng: &mut ChaCha8Rng) -> &DecisionSequence {
        let k = self.cfg.tournament.min(self.population.len());
        let mut picks = index::sample(rng, self.population.len(), k).into_vec();
        picks.sort_unstable();
        let best = picks
            .into_iter()
            .reduce(|a, b| if self.population[b].1 > self.population[a].1 { b } else { a })
            .expect("non-empty population");
        &self.population[best].0
    }

    /// Changes one uniformly chosen mutable position to a different value.
    pub fn mutate(&self, parent: &DecisionSequence, rng: &mut ChaCha8Rng) -> DecisionSequence {
        let mut child = parent.clone();
        if self.mutable.is_empty() {
            return child;
        }
        let pos = self.mutable[rng.gen_range(0..self.mutable.len())];
        let shift = rng.gen_range(1..self.arities[pos]);
        child.0[pos] = (child.0[pos] + shift) % self.arities[pos];
        child
    }
}

impl Controller for Evolution {
    fn strategy(&self) -> Strategy {
        Strategy::Ea
    }

    fn propose(&mut self, rng: &mut ChaCha8Rng) -> DecisionSequence {
        if self.population.len() < self.cfg.population {
            return sample_uniform(&self.arities, rng);
        }
        let parent = self.select_parent(rng).clone();
        self.mutate(&parent, rng)
    }

    fn observe(&mut self, record: &TrialRecord) -> Result<(), ControllerError> {
        self.population.push_back((record.sequence.clone(), record.reward));
        while self.population.len() > self.cfg.population {
            self.population.pop_front();
        }
        Ok(())
    }
}
