use std::collections::BTreeMap;
use std::path::Path;

use etcnas_core::controllers::{ranked, read_report, SearchReport};
use etcnas_core::data::synthetic_separable;
use etcnas_core::engine::read_checkpoint;
use etcnas_core::ingest::{
    preprocess as run_preprocess, read_dataset, read_pcap, split, write_dataset, Capture, ExternalLabels, LabelTable,
};
use etcnas_core::orchestrator::{
    compare_reports, evaluate_model, metrics_csv, render_outcome, run_job, sweep_csv, MetricsRow, SweepRow,
};
use etcnas_core::seed;
use etcnas_core::space::{build_reference as build_graph, Reference};
use serde_json::json;

use crate::config::{fit_space_to, CliConfig};
use crate::error::{io_at, CliError};
use crate::{BuildReferenceArgs, EvalArgs, PreprocessArgs, ReportArgs, SearchArgs, SpaceSizeArgs, SynthArgs};

/// Seed stream of the train/test split, disjoint from the search streams.
const STREAM_TEST_SPLIT: u64 = 5;

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    std::fs::write(path, contents).map_err(io_at(path))
}

fn emit(path: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, contents),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

pub fn preprocess(args: PreprocessArgs) -> Result<(), CliError> {
    let mut cfg = CliConfig::load(args.config.as_deref())?.preprocess;
    if let Some(k) = args.kind {
        cfg.kind = k.into();
    }
    if let Some(c) = args.cutoff {
        cfg.cutoff = c;
    }
    if let Some(a) = args.anchor {
        cfg.anchor = a.into();
    }
    if let Some(s) = args.salt {
        cfg.salt = s;
    }
    if let Some(t) = args.idle_timeout {
        cfg.idle_timeout = t;
    }
    let table_text = std::fs::read_to_string(&args.labels).map_err(io_at(&args.labels))?;
    let table = LabelTable::parse(&table_text).map_err(|e| CliError::User(format!("{}: {e}", args.labels.display())))?;
    let external = args
        .external_labels
        .as_deref()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(io_at(p))?;
            ExternalLabels::parse(&text).map_err(|e| CliError::User(format!("{}: {e}", p.display())))
        })
        .transpose()?;

    let mut captures = Vec::with_capacity(args.pcaps.len());
    for path in &args.pcaps {
        let (packets, stats) = read_pcap(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
        captures.push(Capture {
            id: path.display().to_string(),
            packets,
            stats,
        });
    }
    let out = run_preprocess(captures, &table, external.as_ref(), &cfg)?;
    if out.dataset.is_empty() {
        log::warn!("no labeled flows; the dataset is empty");
    }
    write_dataset(&out.dataset, &args.out)?;
    let meta = json!({
        "classes": out.dataset.class_names(),
        "class_counts": out.dataset.class_counts(),
        "config": cfg,
        "counters": out.counters,
        "provenance": out.provenance,
        "unlabeled": out.unlabeled,
    });
    let meta_path = args.out.with_extension(match args.out.extension() {
        Some(e) => format!("{}.json", e.to_string_lossy()),
        None => "json".into(),
    });
    write_file(&meta_path, &serde_json::to_string_pretty(&meta).expect("json values serialize"))?;
    let c = &out.counters;
    println!(
        "{} flows: {} labeled ({} sni, {} session-id, {} start-time, {} external), {} unlabeled, {} skipped",
        c.flows,
        c.labeled(),
        c.labeled_sni,
        c.labeled_session_id,
        c.labeled_start_time,
        c.labeled_external,
        c.unlabeled,
        c.skipped()
    );
    println!("wrote {} samples of {} bytes to {}", out.dataset.len(), out.dataset.feature_len(), args.out.display());
    Ok(())
}

fn resolve_search(args: &SearchArgs) -> Result<CliConfig, CliError> {
    let mut cfg = CliConfig::load(args.config.as_deref())?;
    if let Some(p) = &args.dataset {
        cfg.dataset = Some(p.clone());
    }
    if let Some(p) = &args.test_dataset {
        cfg.test_dataset = Some(p.clone());
    }
    if let Some(f) = args.train_fraction {
        cfg.train_fraction = f;
    }
    if let Some(p) = &args.out {
        cfg.output = Some(p.clone());
    }
    let job = &mut cfg.search;
    if let Some(s) = args.strategy {
        job.strategy = s.into();
    }
    if let Some(t) = args.trials {
        job.trials = t;
    }
    if let Some(e) = args.epochs {
        job.child_epochs = Some(e);
    }
    if args.partial {
        job.partial = true;
    }
    if let Some(e) = args.continuation_epochs {
        job.continuation_epochs = e;
    }
    if let Some(s) = args.seed {
        job.seed = s;
    }
    if let Some(w) = args.workers {
        job.workers = w;
    }
    if let Some(b) = args.batch_size {
        job.batch_size = b;
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(CliError::User(format!("train fraction {} must lie in (0, 1)", cfg.train_fraction)));
    }
    Ok(cfg)
}

pub fn search(args: SearchArgs) -> Result<(), CliError> {
    let mut cfg = resolve_search(&args)?;
    let dataset_path = cfg
        .dataset
        .clone()
        .ok_or_else(|| CliError::user("no dataset: pass --dataset or set `dataset` in the config"))?;
    let data = read_dataset(&dataset_path).map_err(|e| CliError::User(format!("{}: {e}", dataset_path.display())))?;
    let (train_part, test_part) = match &cfg.test_dataset {
        Some(p) => {
            let test = read_dataset(p).map_err(|e| CliError::User(format!("{}: {e}", p.display())))?;
            if test.class_names() != data.class_names() || test.feature_len() != data.feature_len() {
                return Err(CliError::User(format!("{} does not share the training dataset's classes and row length", p.display())));
            }
            (data, test)
        }
        None => {
            let s = split(&data, cfg.train_fraction, seed::derive(cfg.search.seed, STREAM_TEST_SPLIT));
            (s.train, s.test)
        }
    };
    fit_space_to(&mut cfg.search.space, &train_part)?;
    cfg.search.validate()?;
    let out_dir = cfg.output_dir();
    std::fs::create_dir_all(&out_dir).map_err(io_at(&out_dir))?;
    write_file(
        &out_dir.join("job.toml"),
        &toml::to_string(&cfg.search).map_err(|e| CliError::Internal(e.to_string()))?,
    )?;
    log::info!(
        "{} search, {} trials, {} train / {} test samples, output {}",
        cfg.search.strategy,
        cfg.search.trials,
        train_part.len(),
        test_part.len(),
        out_dir.display()
    );
    let test = (!test_part.is_empty()).then_some(&test_part);
    let outcome = run_job(&cfg.search, &train_part, test, Some(&out_dir))?;

    let summary = render_outcome(&outcome);
    write_file(&out_dir.join("summary.txt"), &summary)?;
    write_file(&out_dir.join("top_n.csv"), &compare_reports(std::slice::from_ref(&outcome.report))?)?;
    if let Some(t) = &outcome.test {
        let row = MetricsRow {
            model: format!("{}-seed{}", cfg.search.strategy, cfg.search.seed),
            scores: t.scores,
            params: outcome.final_model.graph().count_params(),
        };
        write_file(&out_dir.join("metrics.csv"), &metrics_csv(&[row]))?;
    }
    print!("{summary}");
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let model = read_checkpoint(&args.checkpoint).map_err(|e| CliError::User(format!("{}: {e}", args.checkpoint.display())))?;
    let data = read_dataset(&args.dataset).map_err(|e| CliError::User(format!("{}: {e}", args.dataset.display())))?;
    let g = model.graph();
    if data.num_classes() != g.num_classes() {
        return Err(CliError::User(format!(
            "model expects {} classes, {} has {}",
            g.num_classes(),
            args.dataset.display(),
            data.num_classes()
        )));
    }
    if data.is_empty() {
        return Err(CliError::User(format!("{} holds no samples", args.dataset.display())));
    }
    let metrics = evaluate_model(&model, &data, args.batch_size.max(1))?;
    let name = args.name.unwrap_or_else(|| {
        args.checkpoint
            .file_stem()
            .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
    });
    let row = MetricsRow {
        model: name,
        scores: metrics.scores,
        params: g.count_params(),
    };
    emit(args.out.as_deref(), &metrics_csv(&[row]))
}

/// The ten best rewards of every child-epoch budget present in `reports`.
fn epoch_rows(reports: &[SearchReport]) -> Vec<SweepRow> {
    let mut by_epochs: BTreeMap<usize, Vec<_>> = BTreeMap::new();
    for r in reports {
        by_epochs.entry(r.header.child_epochs).or_default().extend(r.records.iter().cloned());
    }
    by_epochs
        .into_iter()
        .filter(|(_, records)| !records.is_empty())
        .map(|(epochs, records)| {
            let top: Vec<f64> = ranked(&records).iter().take(10).map(|r| r.reward).collect();
            let mean = top.iter().sum::<f64>() / top.len() as f64;
            SweepRow { epochs, top, mean }
        })
        .collect()
}

pub fn report(args: ReportArgs) -> Result<(), CliError> {
    let reports = args
        .reports
        .iter()
        .map(|p| read_report(p).map_err(|e| CliError::User(format!("{}: {e}", p.display()))))
        .collect::<Result<Vec<_>, _>>()?;
    let top_n = compare_reports(&reports)?;
    let epochs = sweep_csv(&epoch_rows(&reports));
    match &args.out {
        Some(dir) => {
            write_file(&dir.join("top_n.csv"), &top_n)?;
            write_file(&dir.join("epochs.csv"), &epochs)?;
        }
        None => print!("{top_n}\n{epochs}"),
    }
    Ok(())
}

pub fn space_size(args: SpaceSizeArgs) -> Result<(), CliError> {
    let mut space = CliConfig::load(args.config.as_deref())?.search.space;
    if let Some(n) = args.nodes_per_cell {
        match &mut space {
            etcnas_core::space::SearchSpace::Cell(c) => c.nodes_per_cell = n,
            _ => return Err(CliError::user("--nodes-per-cell applies to the cell space only")),
        }
    }
    space.validate()?;
    if let etcnas_core::space::SearchSpace::Cell(c) = &space {
        println!("space: cell, {} cells x {} nodes, {} operations", c.cells.len(), c.nodes_per_cell, c.op_set.len());
    } else {
        println!("space: {}", space.name());
    }
    println!("decisions: {}", space.sequence_len());
    println!("size: {}", space.size());
    Ok(())
}

pub fn build_reference(args: BuildReferenceArgs) -> Result<(), CliError> {
    let name: Reference = args.name.parse().map_err(|_| {
        let known: Vec<String> = Reference::ALL.iter().map(|r| r.to_string()).collect();
        CliError::User(format!("unknown reference model {:?}; expected one of {}", args.name, known.join(", ")))
    })?;
    let input_len = args.input_len.unwrap_or_else(|| name.native_input_len());
    let graph = build_graph(name, input_len, args.classes)?;
    let p = graph.count_params();
    eprintln!("{name}: {} total parameters, {} trainable", p.total, p.trainable);
    emit(args.out.as_deref(), &graph.to_text())
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    if !(2..=16).contains(&args.classes) {
        return Err(CliError::user("--classes must lie in 2..=16"));
    }
    let data = synthetic_separable(args.samples, args.length, args.classes, args.seed);
    write_dataset(&data, &args.out)?;
    println!("wrote {} samples of {} bytes to {}", data.len(), data.feature_len(), args.out.display());
    Ok(())
}
