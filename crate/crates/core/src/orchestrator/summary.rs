//! Tables derived from search results, as CSV and plain text.

use std::fmt::Write as _;

use super::{OrchestratorError, SearchOutcome, SweepRow};
use crate::controllers::{top_n, SearchReport, TrialRecord};
use crate::graph::ParamCount;
use crate::metrics::Scores;

pub const TOP_N_GRID: [usize; 5] = [1, 5, 10, 20, 30];

/// Published partial-versus-full comparison on the private dataset, printed
/// for context only.
pub const PAPER_REFERENCE: &str = "published reference (private dataset, not reproducible here): \
10-epoch children 77.61% -> 79.72% after continuation (263,368 params); \
40-epoch children 82.86% (111,560 params)";

/// Mean reward of the top `n` trials for each `n` of the grid that fits.
pub fn top_n_summary(records: &[TrialRecord]) -> Vec<(usize, f64)> {
    TOP_N_GRID
        .iter()
        .filter_map(|&n| top_n(records, n).ok().map(|m| (n, m)))
        .collect()
}

fn csv_string(rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub struct MetricsRow {
    pub model: String,
    pub scores: Scores,
    pub params: ParamCount,
}

pub const METRICS_COLUMNS: [&str; 7] = [
    "Model",
    "Accuracy (%)",
    "W Avg. F-1 score (%)",
    "W Avg. recall (%)",
    "W Avg. precision (%)",
    "Total parameters",
    "Trainable parameters",
];

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let header = METRICS_COLUMNS.iter().map(|c| c.to_string()).collect();
    let body = rows.iter().map(|r| {
        vec![
            r.model.clone(),
            format!("{:.2}", r.scores.accuracy),
            format!("{:.2}", r.scores.weighted_f1),
            format!("{:.2}", r.scores.weighted_recall),
            format!("{:.2}", r.scores.weighted_precision),
            r.params.total.to_string(),
            r.params.trainable.to_string(),
        ]
    });
    csv_string(std::iter::once(header).chain(body))
}

/// Strategy by N table of top-N mean rewards (as percentages). All reports
/// must share one search space.
pub fn compare_reports(reports: &[SearchReport]) -> Result<String, OrchestratorError> {
    let first = reports
        .first()
        .ok_or_else(|| OrchestratorError::InvalidJob("no reports to compare".into()))?;
    if let Some(other) = reports.iter().find(|r| r.header.space != first.header.space) {
        return Err(OrchestratorError::InvalidJob(format!(
            "reports mix search spaces ({} and {}); compare runs over one space",
            first.header.space.name(),
            other.header.space.name()
        )));
    }
    let mut header = vec!["strategy".to_string(), "seed".to_string(), "child_epochs".to_string()];
    header.extend(TOP_N_GRID.iter().map(|n| format!("top{n}")));
    let body = reports.iter().map(|r| {
        let mut row = vec![
            r.header.strategy.to_string(),
            r.header.seed.to_string(),
            r.header.child_epochs.to_string(),
        ];
        row.extend(
            TOP_N_GRID
                .iter()
                .map(|&n| top_n(&r.records, n).map_or(String::new(), |m| format!("{:.2}", 100.0 * m))),
        );
        row
    });
    Ok(csv_string(std::iter::once(header).chain(body)))
}

/// One row per epoch budget: the ten best rewards (percent) and their mean.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut header = vec!["epochs".to_string()];
    header.extend((1..=10).map(|k| format!("rank{k}")));
    header.push("mean".into());
    let body = rows.iter().map(|r| {
        let mut row = vec![r.epochs.to_string()];
        row.extend((0..10).map(|k| r.top.get(k).map_or(String::new(), |v| format!("{:.2}", 100.0 * v))));
        row.push(format!("{:.2}", 100.0 * r.mean));
        row
    });
    csv_string(std::iter::once(header).chain(body))
}

pub fn render_outcome(outcome: &SearchOutcome) -> String {
    let h = &outcome.report.header;
    let params = outcome.final_model.graph().count_params();
    let mut s = String::new();
    let _ = writeln!(s, "strategy {} over the {} space, {} trials, seed {}", h.strategy, h.space.name(), outcome.report.records.len(), h.seed);
    let failed = outcome.report.records.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        let _ = writeln!(s, "failed trials: {failed}");
    }
    let _ = writeln!(s, "best trial {} sequence {}", outcome.best.trial_index, outcome.best.sequence);
    let _ = writeln!(s);
    let _ = writeln!(s, "child epochs | child accuracy (%) | full train accuracy (%) | total parameters");
    let full = if h.partial {
        format!("{:.2}", 100.0 * outcome.final_validation)
    } else {
        "-".to_string()
    };
    let _ = writeln!(s, "{} | {:.2} | {} | {}", h.child_epochs, 100.0 * outcome.best.reward, full, params.total);
    let _ = writeln!(s);
    let _ = writeln!(s, "top-N mean validation accuracy (%)");
    for (n, m) in &outcome.top_n {
        let _ = writeln!(s, "  top-{n}: {:.2}", 100.0 * m);
    }
    let b = &outcome.budget;
    let _ = writeln!(
        s,
        "\ntraining epochs: {} child + {} continuation = {}",
        b.child_epochs,
        b.continuation_epochs,
        b.total()
    );
    if let Some(t) = &outcome.test {
        let sc = &t.scores;
        let _ = writeln!(
            s,
            "test: accuracy {:.2}  weighted F1 {:.2}  recall {:.2}  precision {:.2}  params {} ({} trainable)",
            sc.accuracy, sc.weighted_f1, sc.weighted_recall, sc.weighted_precision, params.total, params.trainable
        );
    }
    let _ = writeln!(s, "\n{PAPER_REFERENCE}");
    s
}
