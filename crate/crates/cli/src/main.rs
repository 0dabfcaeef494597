//! `etcnas`: preprocess captures, search architectures, evaluate and report.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use etcnas_core::controllers::Strategy;
use etcnas_core::ingest::{Anchor, FlowKind};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "etcnas", version, about = "Architecture search for encrypted traffic classifiers")]
pub struct Cli {
    /// Log filter, e.g. `info` or `etcnas_core=debug`.
    #[arg(long, global = true, env = "ETCNAS_LOG", default_value = "info")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn pcap captures into a labeled dataset.
    Preprocess(PreprocessArgs),
    /// Run an architecture search.
    Search(SearchArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Tabulate one or more search reports.
    Report(ReportArgs),
    /// Print the cardinality of a search space.
    SpaceSize(SpaceSizeArgs),
    /// Write the graph of a hand-designed baseline.
    BuildReference(BuildReferenceArgs),
    /// Write a separable synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Tls,
    Quic,
}

impl From<KindArg> for FlowKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Tls => FlowKind::Tls,
            KindArg::Quic => FlowKind::Quic,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AnchorArg {
    Network,
    Transport,
    Record,
}

impl From<AnchorArg> for Anchor {
    fn from(a: AnchorArg) -> Self {
        match a {
            AnchorArg::Network => Anchor::Network,
            AnchorArg::Transport => Anchor::Transport,
            AnchorArg::Record => Anchor::Record,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Rs,
    Rl,
    Mcts,
    Ea,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Rs => Strategy::Rs,
            StrategyArg::Rl => Strategy::Rl,
            StrategyArg::Mcts => Strategy::Mcts,
            StrategyArg::Ea => Strategy::Ea,
        }
    }
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Capture files.
    #[arg(required = true)]
    pub pcaps: Vec<PathBuf>,
    /// Lines of `regex,class`, matched against the SNI.
    #[arg(long)]
    pub labels: PathBuf,
    /// Lines of `flow-hash,class` used when no SNI rule applies.
    #[arg(long)]
    pub external_labels: Option<PathBuf>,
    /// Dataset file to write; counters and provenance go to `<out>.json`.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Bytes kept per packet.
    #[arg(long)]
    pub cutoff: Option<usize>,
    #[arg(long, value_enum)]
    pub anchor: Option<AnchorArg>,
    /// Salt of the flow hashes recorded as provenance.
    #[arg(long)]
    pub salt: Option<String>,
    /// Seconds of silence that end a flow.
    #[arg(long)]
    pub idle_timeout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub test_dataset: Option<PathBuf>,
    /// Share of the dataset used for the search when no test dataset is given.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Run folder; defaults to `$ETCNAS_OUTPUT_ROOT/<strategy>-seed<seed>`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Training epochs per child.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Short child training, then continue the best child.
    #[arg(long)]
    pub partial: bool,
    #[arg(long)]
    pub continuation_epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Model column of the output row; defaults to the checkpoint file stem.
    #[arg(long)]
    pub name: Option<String>,
    /// CSV file to write; standard output otherwise.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Folder for `top_n.csv` and `epochs.csv`; standard output otherwise.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpaceSizeArgs {
    /// Configuration whose `[search.space]` is measured.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub nodes_per_cell: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BuildReferenceArgs {
    /// One of UWOrangeH, UCDavisCNN, DeepPacketCNN, E2ECNN.
    pub name: String,
    /// Defaults to the model's native input length.
    #[arg(long)]
    pub input_len: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    /// Graph file to write; standard output otherwise.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 64)]
    pub length: usize,
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Preprocess(a) => commands::preprocess(a),
        Command::Search(a) => commands::search(a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => commands::report(a),
        Command::SpaceSize(a) => commands::space_size(a),
        Command::BuildReference(a) => commands::build_reference(a),
        Command::Synth(a) => commands::synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .init();
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            let text = e.to_string();
            eprintln!("error: {}", text.split_whitespace().collect::<Vec<_>>().join(" "));
            ExitCode::from(e.exit_code())
        }
        Err(_) => ExitCode::from(2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn unknown_strategy_is_a_usage_error() {
        let err = Cli::try_parse_from(["etcnas", "search", "--strategy", "bogus"]).unwrap_err();
        assert_eq!(err.kind(), clap::error::ErrorKind::InvalidValue);
    }
}
