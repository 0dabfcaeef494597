//! The trial loop: a coordinator owns the controller, the report and the
//! best-so-far model; children are trained on scoped worker threads.
//!
//! Resuming replays the existing report through the same proposal sequence,
//! so an interrupted run continues exactly where it stopped.

mod evaluate;
mod job;
mod summary;

use std::path::{Path, PathBuf};
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::controllers::{
    build_controller, ranked, read_report, ControllerError, ReportError, ReportHeader, ReportWriter,
    SearchReport, TrialRecord, REPORT_SCHEMA,
};
use crate::data::Dataset;
use crate::engine::{
    accuracy, predict_classes, read_checkpoint, train, write_checkpoint, EngineError, ModelInstance,
};
use crate::metrics::{confusion, scores, ConfusionMatrix, MetricsError, Scores};
use crate::seed;
use crate::space::SpaceError;

pub use evaluate::{evaluate_child, ChildResult, SearchData};
pub use job::{BudgetLedger, SearchJob, FULL_CHILD_EPOCHS, PARTIAL_CHILD_EPOCHS};
pub use summary::{
    compare_reports, metrics_csv, render_outcome, sweep_csv, top_n_summary, MetricsRow, METRICS_COLUMNS, PAPER_REFERENCE,
    TOP_N_GRID,
};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("existing report does not match this job: {0}")]
    ReportMismatch(String),
    #[error("every trial failed; no model to finalise")]
    NoSuccessfulTrial,
}

/// Random streams derived from the job seed.
const STREAM_CONTROLLER_INIT: u64 = 1;
const STREAM_PROPOSALS: u64 = 2;
const STREAM_CHILDREN: u64 = 3;
const STREAM_VALIDATION: u64 = 4;

pub const REPORT_FILE: &str = "report.jsonl";
pub const BEST_CHILD_FILE: &str = "best_child.ckpt";
pub const FINAL_MODEL_FILE: &str = "final.ckpt";

/// Seed a trial's initialisation and training derive from.
pub fn child_seed(job_seed: u64, trial_index: usize) -> u64 {
    seed::derive(seed::derive(job_seed, STREAM_CHILDREN), trial_index as u64)
}

pub fn search_data(job: &SearchJob, train: &Dataset) -> SearchData {
    SearchData::carve(train, job.validation_fraction, seed::derive(job.seed, STREAM_VALIDATION))
}

#[derive(Debug, Clone)]
pub struct TestMetrics {
    pub confusion: ConfusionMatrix,
    pub scores: Scores,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub report: SearchReport,
    /// Highest reward; ties go to the earlier trial.
    pub best: TrialRecord,
    /// The best child, continued in partial mode.
    pub final_model: ModelInstance,
    /// Validation accuracy of `final_model`; equals `best.reward` in full mode.
    pub final_validation: f64,
    pub test: Option<TestMetrics>,
    pub top_n: Vec<(usize, f64)>,
    pub budget: BudgetLedger,
}

pub fn report_header(job: &SearchJob) -> ReportHeader {
    ReportHeader {
        schema: REPORT_SCHEMA.to_string(),
        strategy: job.strategy,
        space: job.space.clone(),
        trials: job.trials,
        seed: job.seed,
        child_epochs: job.child_epochs(),
        partial: job.partial,
    }
}

/// Where a job persists its artifacts.
struct Sink {
    dir: PathBuf,
    writer: ReportWriter,
    replay: Vec<TrialRecord>,
}

impl Sink {
    fn open(dir: &Path, job: &SearchJob) -> Result<Self, OrchestratorError> {
        std::fs::create_dir_all(dir).map_err(ReportError::from)?;
        let path = dir.join(REPORT_FILE);
        let header = report_header(job);
        if path.exists() {
            let existing = read_report(&path)?;
            if existing.header != header {
                return Err(OrchestratorError::ReportMismatch(format!(
                    "{} was written by a different job configuration",
                    path.display()
                )));
            }
            let writer = ReportWriter::resume(&path)?;
            log::info!("resuming after {} recorded trials", existing.records.len());
            return Ok(Self {
                dir: dir.to_path_buf(),
                writer,
                replay: existing.records,
            });
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            writer: ReportWriter::create(&path, &header)?,
            replay: Vec::new(),
        })
    }
}

struct SearchState {
    records: Vec<TrialRecord>,
    best: Option<(usize, Option<ModelInstance>)>,
}

fn evaluate_batch(job: &SearchJob, data: &SearchData, work: &[(usize, crate::space::DecisionSequence)]) -> Vec<ChildResult> {
    let eval = |(i, seq): &(usize, crate::space::DecisionSequence)| {
        let cfg = job.train_config(job.child_epochs(), child_seed(job.seed, *i));
        evaluate_child(&job.space, seq, data, &cfg, *i)
    };
    if work.len() <= 1 {
        return work.iter().map(eval).collect();
    }
    thread::scope(|s| {
        let handles: Vec<_> = work.iter().map(|w| s.spawn(move || eval(w))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("child evaluation panicked"))
            .collect()
    })
}

fn search(job: &SearchJob, data: &SearchData, mut sink: Option<&mut Sink>) -> Result<SearchState, OrchestratorError> {
    let arities = job.space.arities();
    let mut controller = build_controller(
        job.strategy,
        &arities,
        &job.controllers,
        seed::derive(job.seed, STREAM_CONTROLLER_INIT),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(job.seed, STREAM_PROPOSALS));
    let mut state = SearchState {
        records: Vec::with_capacity(job.trials),
        best: None,
    };
    let width = job.batch_width();
    while state.records.len() < job.trials {
        let start = state.records.len();
        let n = width.min(job.trials - start);
        let proposals: Vec<_> = (start..start + n).map(|i| (i, controller.propose(&mut rng))).collect();

        let replay = sink.as_ref().map_or(&[][..], |s| &s.replay[..]);
        let mut fresh = Vec::new();
        let mut results: Vec<Option<ChildResult>> = vec![None; n];
        for (k, (i, seq)) in proposals.iter().enumerate() {
            match replay.get(*i) {
                Some(r) if r.sequence == *seq => {
                    results[k] = Some(ChildResult {
                        record: r.clone(),
                        model: None,
                    })
                }
                Some(r) => {
                    return Err(OrchestratorError::ReportMismatch(format!(
                        "trial {i} recorded {} but the job proposes {seq}",
                        r.sequence
                    )))
                }
                None => fresh.push((*i, seq.clone())),
            }
        }
        let mut evaluated = evaluate_batch(job, data, &fresh).into_iter();
        for slot in results.iter_mut().filter(|r| r.is_none()) {
            *slot = evaluated.next();
        }

        for result in results.into_iter().map(|r| r.expect("every proposal resolved")) {
            let ChildResult { record, model } = result;
            controller.observe(&record)?;
            let replayed = model.is_none() && record.error.is_none();
            let improves = state
                .best
                .as_ref()
                .is_none_or(|(b, _)| record.reward > state.records[*b].reward);
            if let Some(sink) = sink.as_deref_mut() {
                if record.trial_index >= sink.replay.len() {
                    sink.writer.record(&record)?;
                }
                if improves && !replayed {
                    if let Some(m) = &model {
                        write_checkpoint(m, &sink.dir.join(BEST_CHILD_FILE))?;
                    }
                }
            }
            log::info!(
                "trial {} reward {:.4} params {}",
                record.trial_index,
                record.reward,
                record.params.total
            );
            if improves && record.error.is_none() {
                state.best = Some((record.trial_index, model));
            }
            state.records.push(record);
        }
    }
    Ok(state)
}

/// Loads or rebuilds the model of a replayed best trial.
fn recover_best(job: &SearchJob, data: &SearchData, best: &TrialRecord, dir: Option<&Path>) -> Result<ModelInstance, OrchestratorError> {
    let graph = job.space.decode(&best.sequence)?;
    if let Some(path) = dir.map(|d| d.join(BEST_CHILD_FILE)).filter(|p| p.exists()) {
        let model = read_checkpoint(&path)?;
        if model.graph() == &graph && model.epoch() == job.child_epochs() {
            return Ok(model);
        }
    }
    let cfg = job.train_config(job.child_epochs(), child_seed(job.seed, best.trial_index));
    evaluate_child(&job.space, &best.sequence, data, &cfg, best.trial_index)
        .model
        .ok_or(OrchestratorError::NoSuccessfulTrial)
}

/// Runs (or resumes) a search. With `out_dir`, the report, the best child's
/// checkpoint and the final model are written there.
pub fn run_job(
    job: &SearchJob,
    train_split: &Dataset,
    test: Option<&Dataset>,
    out_dir: Option<&Path>,
) -> Result<SearchOutcome, OrchestratorError> {
    job.validate()?;
    let data = search_data(job, train_split);
    let mut sink = out_dir.map(|d| Sink::open(d, job)).transpose()?;
    let state = search(job, &data, sink.as_mut())?;

    let (best_index, best_model) = state.best.ok_or(OrchestratorError::NoSuccessfulTrial)?;
    let best = state.records[best_index].clone();
    let mut model = match best_model {
        Some(m) => m,
        None => recover_best(job, &data, &best, out_dir)?,
    };

    let final_validation = if job.partial {
        let target = job.child_epochs() + job.continuation();
        let saved = out_dir
            .map(|d| d.join(FINAL_MODEL_FILE))
            .filter(|p| p.exists())
            .map(|p| read_checkpoint(&p))
            .transpose()?
            .filter(|m| m.graph() == model.graph() && m.epoch() == target);
        model = match saved {
            Some(m) => m,
            None => {
                // Same seed as the child: the continued schedule and data order
                // are those of an uninterrupted run.
                let cfg = job.train_config(job.continuation(), child_seed(job.seed, best.trial_index));
                train(&mut model, &data.train, None, &cfg)?;
                model
            }
        };
        if data.validation.is_empty() {
            0.0
        } else {
            accuracy(&model, &data.validation, job.batch_size)?
        }
    } else {
        best.reward
    };
    if let Some(d) = out_dir {
        write_checkpoint(&model, &d.join(FINAL_MODEL_FILE))?;
        std::fs::write(d.join("best.graph"), model.graph().to_text()).map_err(ReportError::from)?;
    }

    let test = test.map(|t| evaluate_model(&model, t, job.batch_size)).transpose()?;
    let budget = BudgetLedger {
        trials: state.records.len(),
        child_epochs: state.records.iter().map(|r| r.epochs).sum(),
        continuation_epochs: job.continuation(),
    };
    let top_n = top_n_summary(&state.records);
    Ok(SearchOutcome {
        report: SearchReport {
            header: report_header(job),
            records: state.records,
        },
        best,
        final_model: model,
        final_validation,
        test,
        top_n,
        budget,
    })
}

pub fn evaluate_model(model: &ModelInstance, data: &Dataset, batch_size: usize) -> Result<TestMetrics, OrchestratorError> {
    let pred = predict_classes(model, data, batch_size)?;
    let truth: Vec<usize> = data.labels().collect();
    let cm = confusion(&truth, &pred, model.graph().num_classes())?;
    Ok(TestMetrics {
        scores: scores(&cm)?,
        confusion: cm,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub epochs: usize,
    /// Rewards of the best ten children, best first.
    pub top: Vec<f64>,
    pub mean: f64,
}

/// Repeats the search in full mode at each child-epoch budget and keeps the
/// ten best rewards of each.
pub fn epoch_sweep(job: &SearchJob, train_split: &Dataset, grid: &[usize]) -> Result<Vec<SweepRow>, OrchestratorError> {
    if grid.is_empty() {
        return Err(OrchestratorError::InvalidJob("epoch grid is empty".into()));
    }
    let data = search_data(job, train_split);
    grid.iter()
        .map(|&epochs| {
            let sub = SearchJob {
                child_epochs: Some(epochs),
                partial: false,
                ..job.clone()
            };
            sub.validate()?;
            let state = search(&sub, &data, None)?;
            let top: Vec<f64> = ranked(&state.records).iter().take(10).map(|r| r.reward).collect();
            let mean = top.iter().sum::<f64>() / top.len() as f64;
            Ok(SweepRow { epochs, top, mean })
        })
        .collect()
}
