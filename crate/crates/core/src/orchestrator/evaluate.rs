use std::time::Instant;

use crate::controllers::TrialRecord;
use crate::data::{stratified_split, Dataset};
use crate::engine::{accuracy, train, ModelInstance, TrainConfig};
use crate::space::{DecisionSequence, SearchSpace};

/// The training split divided into the part children train on and the part
/// that scores them.
#[derive(Debug, Clone)]
pub struct SearchData {
    pub train: Dataset,
    pub validation: Dataset,
}

impl SearchData {
    /// Stratified carve-out of `validation_fraction` of `data`.
    pub fn carve(data: &Dataset, validation_fraction: f64, seed: u64) -> Self {
        let split = stratified_split(data, 1.0 - validation_fraction, seed);
        for c in &split.small_classes {
            log::warn!("class {c} is too small for a stratified validation split");
        }
        Self {
            train: data.subset(&split.first),
            validation: data.subset(&split.second),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChildResult {
    pub record: TrialRecord,
    /// Absent when the child failed.
    pub model: Option<ModelInstance>,
}

/// Decodes, initialises and trains one child; the reward is its accuracy on
/// the validation part. Any failure yields a zero-reward record carrying the
/// error text.
pub fn evaluate_child(
    space: &SearchSpace,
    sequence: &DecisionSequence,
    data: &SearchData,
    cfg: &TrainConfig,
    trial_index: usize,
) -> ChildResult {
    let start = Instant::now();
    let mut record = TrialRecord::scored(trial_index, sequence.clone(), 0.0);
    let outcome = space.decode(sequence).map_err(|e| e.to_string()).and_then(|graph| {
        record.params = graph.count_params();
        let mut model = ModelInstance::init(graph, cfg.seed);
        train(&mut model, &data.train, None, cfg).map_err(|e| e.to_string())?;
        let reward = if data.validation.is_empty() {
            0.0
        } else {
            accuracy(&model, &data.validation, cfg.batch_size).map_err(|e| e.to_string())?
        };
        Ok((model, reward))
    });
    record.wall_time = start.elapsed().as_secs_f64();
    match outcome {
        Ok((model, reward)) => {
            record.reward = reward;
            record.epochs = cfg.epochs;
            ChildResult {
                record,
                model: Some(model),
            }
        }
        Err(e) => {
            log::warn!("trial {trial_index} failed: {e}");
            record.error = Some(e);
            ChildResult { record, model: None }
        }
    }
}
