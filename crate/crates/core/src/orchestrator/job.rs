use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::controllers::{ControllerConfig, Strategy};
use crate::engine::TrainConfig;
use crate::space::{SearchSpace, SpaceConfig};

pub const FULL_CHILD_EPOCHS: usize = 40;
pub const PARTIAL_CHILD_EPOCHS: usize = 10;

/// One search run. Loaded from TOML; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchJob {
    pub space: SearchSpace,
    pub strategy: Strategy,
    pub trials: usize,
    /// Defaults to 40, or 10 in partial mode.
    pub child_epochs: Option<usize>,
    pub partial: bool,
    pub continuation_epochs: usize,
    /// Share of the training split held out to score children.
    pub validation_fraction: f64,
    pub seed: u64,
    /// Concurrent child evaluations; order-sensitive strategies use one.
    pub workers: usize,
    pub initial_lr: f64,
    pub lr_halving_period: usize,
    pub batch_size: usize,
    pub controllers: ControllerConfig,
}

impl Default for SearchJob {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            space: SearchSpace::Cell(SpaceConfig::default()),
            strategy: Strategy::Rs,
            trials: 100,
            child_epochs: None,
            partial: false,
            continuation_epochs: 30,
            validation_fraction: 0.2,
            seed: 0,
            workers: 1,
            initial_lr: train.initial_lr,
            lr_halving_period: train.lr_halving_period,
            batch_size: train.batch_size,
            controllers: ControllerConfig::default(),
        }
    }
}

impl SearchJob {
    pub fn from_toml(text: &str) -> Result<Self, OrchestratorError> {
        let job: SearchJob = toml::from_str(text).map_err(|e| OrchestratorError::InvalidJob(e.to_string()))?;
        job.validate()?;
        Ok(job)
    }

    pub fn child_epochs(&self) -> usize {
        self.child_epochs.unwrap_or(if self.partial {
            PARTIAL_CHILD_EPOCHS
        } else {
            FULL_CHILD_EPOCHS
        })
    }

    /// Continuation epochs actually spent: zero in full mode.
    pub fn continuation(&self) -> usize {
        if self.partial {
            self.continuation_epochs
        } else {
            0
        }
    }

    /// Concurrent evaluations per coordinator round.
    pub fn batch_width(&self) -> usize {
        if self.strategy.ordered() {
            1
        } else {
            self.workers.max(1)
        }
    }

    pub fn train_config(&self, epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            initial_lr: self.initial_lr,
            lr_halving_period: self.lr_halving_period,
            batch_size: self.batch_size,
            epochs,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: &str| Err(OrchestratorError::InvalidJob(m.to_string()));
        self.space.validate()?;
        if self.trials == 0 {
            return bad("trials must be positive");
        }
        if self.child_epochs() == 0 {
            return bad("child_epochs must be positive");
        }
        if self.partial && self.continuation_epochs == 0 {
            return bad("partial training needs continuation_epochs > 0");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if self.workers == 0 {
            return bad("workers must be positive");
        }
        self.train_config(1, 0).validate()?;
        Ok(())
    }
}

/// Training epochs spent by a search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub trials: usize,
    pub child_epochs: usize,
    pub continuation_epochs: usize,
}

impl BudgetLedger {
    /// What `job` spends if every child trains to completion.
    pub fn planned(job: &SearchJob) -> Self {
        Self {
            trials: job.trials,
            child_epochs: job.trials * job.child_epochs(),
            continuation_epochs: job.continuation(),
        }
    }

    pub fn total(&self) -> usize {
        self.child_epochs + self.continuation_epochs
    }

    /// `self.total() / other.total()`.
    pub fn fraction_of(&self, other: &BudgetLedger) -> f64 {
        self.total() as f64 / other.total() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_budget_is_about_a_quarter() {
        let full = SearchJob::default();
        let partial = SearchJob {
            partial: true,
            ..Default::default()
        };
        let f = BudgetLedger::planned(&full);
        let p = BudgetLedger::planned(&partial);
        assert_eq!(f.total(), 4000);
        assert_eq!(p.total(), 1030);
        assert!(p.fraction_of(&f) <= 0.26);
    }

    #[test]
    fn toml_overrides_defaults() {
        let job = SearchJob::from_toml(
            "strategy = \"ea\"\ntrials = 7\npartial = true\n[space]\ntype = \"cell\"\nnodes_per_cell = 2\n",
        )
        .unwrap();
        assert_eq!(job.strategy, Strategy::Ea);
        assert_eq!(job.child_epochs(), 10);
        assert_eq!(job.continuation(), 30);
        let SearchSpace::Cell(c) = &job.space else { panic!() };
        assert_eq!(c.nodes_per_cell, 2);
        assert!(SearchJob::from_toml("trials = 0").is_err());
        assert!(SearchJob::from_toml("partial = true\ncontinuation_epochs = 0").is_err());
        assert!(SearchJob::from_toml("colour = 3").is_err());
    }

    #[test]
    fn ordered_strategies_run_one_at_a_time() {
        for (s, w) in [(Strategy::Rs, 4), (Strategy::Ea, 4), (Strategy::Rl, 1), (Strategy::Mcts, 1)] {
            let job = SearchJob {
                strategy: s,
                workers: 4,
                ..Default::default()
            };
            assert_eq!(job.batch_width(), w);
        }
    }
}
