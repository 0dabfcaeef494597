use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::learning_rate;
use super::{EngineError, ModelInstance};
use crate::data::Dataset;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_halving_period: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.001,
            lr_halving_period: 10,
            batch_size: 128,
            epochs: 40,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |what: &str| Err(EngineError::InvalidConfig(format!("{what} must be positive")));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr");
        }
        if self.lr_halving_period == 0 {
            return bad("lr_halving_period");
        }
        if self.batch_size == 0 {
            return bad("batch_size");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Global epoch index (continues across calls to [`train`]).
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

fn check_data(model: &ModelInstance, data: &Dataset) -> Result<(), EngineError> {
    if data.is_empty() {
        return Err(EngineError::EmptyDataset);
    }
    let g = model.graph();
    if data.feature_len() != g.input_len() {
        return Err(EngineError::ShapeMismatch {
            expected: vec![g.input_len()],
            found: vec![data.feature_len()],
        });
    }
    if data.num_classes() > g.num_classes() {
        return Err(EngineError::LabelOutOfRange {
            label: data.num_classes() - 1,
            classes: g.num_classes(),
        });
    }
    Ok(())
}

/// Trains `cfg.epochs` more epochs. Shuffling and dropout at global epoch
/// `e` are seeded from `(cfg.seed, e)` only, so splitting a run into several
/// calls reproduces the uninterrupted run exactly.
pub fn train(
    model: &mut ModelInstance,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>, EngineError> {
    cfg.validate()?;
    check_data(model, data)?;
    if let Some(v) = val {
        check_data(model, v)?;
    }
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        let epoch = model.epoch();
        let lr = learning_rate(cfg.initial_lr, cfg.lr_halving_period, epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.batch(chunk);
            let labels = data.batch_labels(chunk);
            let loss = model.train_step(&batch, &labels, lr, &mut rng)?;
            loss_sum += loss * chunk.len() as f64;
        }
        model.set_epoch(epoch + 1);
        let val_accuracy = val.map(|v| accuracy(model, v, cfg.batch_size)).transpose()?;
        log::debug!("epoch {epoch} lr {lr} loss {:.5}", loss_sum / data.len() as f64);
        history.push(EpochStats {
            epoch,
            lr,
            train_loss: loss_sum / data.len() as f64,
            val_accuracy,
        });
    }
    Ok(history)
}

/// Eval-mode argmax predictions.
pub fn predict_classes(
    model: &ModelInstance,
    data: &Dataset,
    batch_size: usize,
) -> Result<Vec<usize>, EngineError> {
    check_data(model, data)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let probs = model.predict(&data.batch(chunk))?;
        for i in 0..chunk.len() {
            let row = probs.row(i);
            let best = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                .expect("at least one class");
            out.push(best);
        }
    }
    Ok(out)
}

/// Fraction of correctly classified samples.
pub fn accuracy(model: &ModelInstance, data: &Dataset, batch_size: usize) -> Result<f64, EngineError> {
    let pred = predict_classes(model, data, batch_size)?;
    let hits = pred.iter().zip(data.labels()).filter(|(p, l)| **p == *l).count();
    Ok(hits as f64 / data.len() as f64)
}
