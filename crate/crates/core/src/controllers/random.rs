use rand_chacha::ChaCha8Rng;

use super::{Controller, ControllerError, Strategy, TrialRecord};
use crate::space::{sample_uniform, DecisionSequence};

/// Independent uniform choice at every position; keeps no state.
#[derive(Debug, Clone)]
pub struct RandomSearch {
    arities: Vec<usize>,
}

impl RandomSearch {
    pub fn new(arities: &[usize]) -> Self {
        Self {
            arities: arities.to_vec(),
        }
    }
}

impl Controller for RandomSearch {
    fn strategy(&self) -> Strategy {
        Strategy::Rs
    }

    fn propose(&mut self, rng: &mut ChaCha8Rng) -> DecisionSequence {
        sample_uniform(&self.arities, rng)
    }

    fn observe(&mut self, _record: &TrialRecord) -> Result<(), ControllerError> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn seeded_proposals_repeat() {
        let arities = [1, 5, 2, 5, 3, 5];
        let run = || {
            let mut rs = RandomSearch::new(&arities);
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            (0..20).map(|_| rs.propose(&mut rng)).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().all(|s| s.0.iter().zip(&arities).all(|(v, n)| v < n)));
    }
}
