//! File configuration merged with command-line flags.

use std::path::{Path, PathBuf};

use etcnas_core::data::Dataset;
use etcnas_core::ingest::PreprocessConfig;
use etcnas_core::orchestrator::SearchJob;
use etcnas_core::space::SearchSpace;
use serde::{Deserialize, Serialize};

use crate::error::{io_at, CliError};

/// Environment variable naming the directory that default run folders go under.
pub const OUTPUT_ROOT_ENV: &str = "ETCNAS_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

/// Paths in the file are relative to the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub dataset: Option<PathBuf>,
    /// Without it, the dataset is split into train and test parts.
    pub test_dataset: Option<PathBuf>,
    pub train_fraction: f64,
    pub output: Option<PathBuf>,
    pub search: SearchJob,
    pub preprocess: PreprocessConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            test_dataset: None,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            output: None,
            search: SearchJob::default(),
            preprocess: PreprocessConfig::default(),
        }
    }
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        let mut cfg: CliConfig =
            toml::from_str(&text).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset, &mut cfg.test_dataset, &mut cfg.output].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Explicit output, else a run folder named after strategy and seed under
    /// the output root.
    pub fn output_dir(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| {
            let root = std::env::var_os(OUTPUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
            root.join(format!("{}-seed{}", self.search.strategy, self.search.seed))
        })
    }
}

/// The dataset fixes the input length and class count of the space.
pub fn fit_space_to(space: &mut SearchSpace, data: &Dataset) -> Result<(), CliError> {
    let (length, channels, classes) = match space {
        SearchSpace::Cell(c) => (&mut c.input_length, c.input_channels, &mut c.num_classes),
        SearchSpace::CnnMlp(s) => (&mut s.input_length, s.input_channels, &mut s.num_classes),
    };
    if !data.feature_len().is_multiple_of(channels) {
        return Err(CliError::User(format!(
            "dataset rows of {} bytes do not divide into {channels} input channels",
            data.feature_len()
        )));
    }
    *length = data.feature_len() / channels;
    *classes = data.num_classes();
    Ok(())
}
