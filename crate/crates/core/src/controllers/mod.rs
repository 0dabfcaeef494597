//! Search strategies behind one interface: propose a decision sequence,
//! observe its reward.
//!
//! Random search and evolution accept observations in any order. The policy
//! gradient and tree search controllers learn from the sequences they
//! proposed and reject observations that arrive out of proposal order.

mod evolution;
mod mcts;
mod random;
mod report;
mod rl;
mod surrogate;

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::ParamCount;
use crate::space::DecisionSequence;

pub use evolution::{EvolutionConfig, Evolution};
pub use mcts::{Mcts, MctsConfig, TreeNode};
pub use random::RandomSearch;
pub use report::{read_report, ReportError, ReportHeader, ReportWriter, SearchReport, REPORT_SCHEMA};
pub use rl::{Reinforce, RlConfig};
pub use surrogate::{BoostingConfig, Surrogate};

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("observation for {found} does not match the oldest pending proposal {expected}")]
    OutOfOrderObservation { expected: String, found: String },
    #[error("surrogate needs at least 2 observations, found {found}")]
    InsufficientData { found: usize },
    #[error("n = {n} is outside 1..={trials}")]
    NOutOfRange { n: usize, trials: usize },
    #[error("unknown strategy `{0}` (expected rs, rl, mcts or ea)")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Rs,
    Rl,
    Mcts,
    Ea,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Rs, Strategy::Rl, Strategy::Mcts, Strategy::Ea];

    /// Whether observations must arrive in proposal order.
    pub fn ordered(self) -> bool {
        matches!(self, Strategy::Rl | Strategy::Mcts)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Rs => "rs",
            Strategy::Rl => "rl",
            Strategy::Mcts => "mcts",
            Strategy::Ea => "ea",
        })
    }
}

impl FromStr for Strategy {
    type Err = ControllerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| ControllerError::UnknownStrategy(s.to_string()))
    }
}

/// One evaluated architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub sequence: DecisionSequence,
    /// Validation accuracy fraction in `[0, 1]`.
    pub reward: f64,
    pub params: ParamCount,
    /// Seconds.
    pub wall_time: f64,
    /// Training epochs spent on this trial.
    #[serde(default)]
    pub epochs: usize,
    /// Set when evaluation failed; the reward is then 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRecord {
    /// A record carrying only a reward, for evaluators that train nothing.
    pub fn scored(trial_index: usize, sequence: DecisionSequence, reward: f64) -> Self {
        Self {
            trial_index,
            sequence,
            reward,
            params: ParamCount::default(),
            wall_time: 0.0,
            epochs: 0,
            error: None,
        }
    }
}

pub trait Controller: Send {
    fn strategy(&self) -> Strategy;

    fn propose(&mut self, rng: &mut ChaCha8Rng) -> DecisionSequence;

    fn observe(&mut self, record: &TrialRecord) -> Result<(), ControllerError>;
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub rl: RlConfig,
    pub mcts: MctsConfig,
    pub ea: EvolutionConfig,
}

pub fn build_controller(
    strategy: Strategy,
    arities: &[usize],
    cfg: &ControllerConfig,
    seed: u64,
) -> Box<dyn Controller> {
    match strategy {
        Strategy::Rs => Box::new(RandomSearch::new(arities)),
        Strategy::Rl => Box::new(Reinforce::new(arities, cfg.rl.clone(), seed)),
        Strategy::Mcts => Box::new(Mcts::new(arities, cfg.mcts.clone())),
        Strategy::Ea => Box::new(Evolution::new(arities, cfg.ea.clone())),
    }
}

/// Records sorted by descending reward, ties toward the earlier trial.
pub fn ranked(records: &[TrialRecord]) -> Vec<&TrialRecord> {
    let mut sorted: Vec<&TrialRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        b.reward
            .total_cmp(&a.reward)
            .then(a.trial_index.cmp(&b.trial_index))
    });
    sorted
}

/// Mean reward of the `n` best trials.
pub fn top_n(records: &[TrialRecord], n: usize) -> Result<f64, ControllerError> {
    if n == 0 || n > records.len() {
        return Err(ControllerError::NOutOfRange {
            n,
            trials: records.len(),
        });
    }
    Ok(ranked(records)[..n].iter().map(|r| r.reward).sum::<f64>() / n as f64)
}

/// Sequential propose, evaluate, observe loop. On an evaluator error the
/// records gathered so far are returned alongside it.
pub fn run_search<E>(
    controller: &mut dyn Controller,
    trials: usize,
    rng: &mut ChaCha8Rng,
    mut evaluate: impl FnMut(usize, &DecisionSequence) -> Result<TrialRecord, E>,
) -> Result<Vec<TrialRecord>, (Vec<TrialRecord>, E)> {
    let mut records = Vec::with_capacity(trials);
    for i in 0..trials {
        let seq = controller.propose(rng);
        match evaluate(i, &seq) {
            Ok(rec) => {
                controller
                    .observe(&rec)
                    .expect("records are observed in proposal order");
                records.push(rec);
            }
            Err(e) => return Err((records, e)),
        }
    }
    Ok(records)
}

/// Fraction of op decisions equal to `op` in a cell-space sequence, whose
/// op choices sit at odd positions.
pub fn op_fraction(seq: &DecisionSequence, op: usize) -> f64 {
    let ops: Vec<usize> = seq.as_slice().iter().skip(1).step_by(2).copied().collect();
    ops.iter().filter(|&&o| o == op).count() as f64 / ops.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;

    fn recs(rewards: &[f64]) -> Vec<TrialRecord> {
        rewards
            .iter()
            .enumerate()
            .map(|(i, &r)| TrialRecord::scored(i, DecisionSequence(vec![i]), r))
            .collect()
    }

    #[test]
    fn top_n_examples() {
        let r = recs(&[0.5, 0.9, 0.7]);
        assert!((top_n(&r, 2).unwrap() - 0.8).abs() < 1e-12);
        assert!((top_n(&r, 3).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(top_n(&r, 4), Err(ControllerError::NOutOfRange { n: 4, trials: 3 }));
        assert!(top_n(&r, 0).is_err());
    }

    #[test]
    fn ties_rank_earlier_trial_first() {
        let r = recs(&[0.3, 0.8, 0.8, 0.1]);
        let order: Vec<usize> = ranked(&r).iter().map(|t| t.trial_index).collect();
        assert_eq!(order, vec![1, 2, 0, 3]);
    }

    #[test]
    fn top_n_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let len = rng.gen_range(1..40);
            let rewards: Vec<f64> = (0..len).map(|_| (rng.gen_range(0..20) as f64) / 20.0).collect();
            let n = rng.gen_range(1..=len);
            let mut sorted = rewards.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let oracle = sorted[..n].iter().sum::<f64>() / n as f64;
            assert!((top_n(&recs(&rewards), n).unwrap() - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
        assert!(matches!("bayes".parse::<Strategy>(), Err(ControllerError::UnknownStrategy(_))));
    }

    #[test]
    fn op_fraction_counts_odd_positions() {
        let s = DecisionSequence(vec![0, 1, 0, 1, 1, 3, 0, 1]);
        assert_eq!(op_fraction(&s, 1), 0.75);
    }
}
