//! `taskrec evaluate`: score saved models on the test split, or retrain
//! them over seeded runs, and write JSON and text reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use taskrec_core::eval::{
    fingerprint, run_trials, topk_accuracies, EvalReport, MetricSummary, ReportKind, ReportRow,
    TOP1, TOP5,
};
use taskrec_core::experiment::{
    evaluate_help, help_trial, recommendation_trial, HelpModel, HelpModelSpec,
};
use taskrec_core::persist::ModelKind;

use crate::cmd::{parse_trainable, DataArgs, TRAINABLE};
use crate::data::{create_dir, write_json_file, DataDir, Output, Split};
use crate::error::{CliError, CliResult, WithPath};
use crate::knobs::Knobs;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated models (default: every saved model, or all with --retrain)
    #[arg(long, value_delimiter = ',', value_parser = parse_trainable)]
    pub models: Vec<ModelKind>,
    /// Retrain every model on each of `--runs` seeds instead of loading saved files
    #[arg(long)]
    pub retrain: bool,
    /// Report directory (defaults to <DATA>/reports)
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub knobs: Knobs,
}

pub fn run(args: Args, config: Option<&Path>, out: &Output) -> CliResult<()> {
    let knobs = args.knobs.resolve(config)?;
    let dir = args.data.dir();
    let all: Vec<ModelKind> = TRAINABLE
        .iter()
        .map(|n| ModelKind::parse(n).expect("known name"))
        .collect();
    let models = if !args.models.is_empty() {
        args.models.clone()
    } else if args.retrain {
        all
    } else {
        all.into_iter().filter(|k| dir.has_model(*k)).collect()
    };
    if models.is_empty() {
        return Err(CliError::validation(format!(
            "no saved models in {}: run `taskrec train <model>` first or pass --retrain",
            dir.models.display()
        )));
    }
    let recs: Vec<ModelKind> = models
        .iter()
        .copied()
        .filter(|k| k.is_recommender())
        .collect();
    let helps: Vec<ModelKind> = models.iter().copied().filter(|k| k.is_help()).collect();

    let mut reports = Vec::new();
    if args.retrain {
        if !recs.is_empty() {
            reports.push(("recommendation", retrain_recommenders(&dir, &knobs, &recs)?));
        }
        if !helps.is_empty() {
            reports.push(("help", retrain_help(&dir, &knobs, &helps)?));
        }
    } else {
        if !recs.is_empty() {
            reports.push(("recommendation", frozen_recommenders(&dir, &knobs, &recs)?));
        }
        if !helps.is_empty() {
            reports.push(("help", frozen_help(&dir, &knobs, &helps)?));
        }
    }

    let report_dir = args.out.clone().unwrap_or_else(|| dir.root.join("reports"));
    create_dir(&report_dir)?;
    for (name, report) in &reports {
        let table = report.render_table();
        write_json_file(&report_dir.join(format!("{name}.json")), report)?;
        let txt = report_dir.join(format!("{name}.txt"));
        std::fs::write(&txt, &table).at(&txt)?;
        out.text(&table);
        out.event(&json!({ "event": "report", "kind": name, "path": txt.display().to_string() }));
    }
    Ok(())
}

fn file_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).at(path)
}

fn settings_digest(knobs: &Knobs) -> CliResult<Vec<u8>> {
    serde_json::to_vec(
        &json!({ "recommender": knobs.recommender(), "help": knobs.help(), "runs": knobs.runs() }),
    )
    .map_err(|e| CliError::Internal(e.to_string()))
}

fn single(v: f64) -> MetricSummary {
    MetricSummary::from_values(vec![v])
}

fn frozen_recommenders(dir: &DataDir, knobs: &Knobs, kinds: &[ModelKind]) -> CliResult<EvalReport> {
    let vocab = dir.vocab()?;
    let test = dir.sequences(Split::Test)?;
    let btm = if kinds
        .iter()
        .any(|k| matches!(k, ModelKind::Taskrnn | ModelKind::Jtcrnn))
    {
        Some(dir.btm(&vocab)?)
    } else {
        None
    };
    let mut parts = vec![
        settings_digest(knobs)?,
        file_bytes(&dir.vocab_path())?,
        file_bytes(&dir.sequences_path(Split::Test))?,
    ];
    let mut rows = Vec::new();
    for &kind in kinds {
        parts.push(file_bytes(&dir.model_path(kind))?);
        let model = dir.recommender(kind, &vocab)?;
        let acc = topk_accuracies(&model.predictor(btm.as_ref())?, &test, &[1, 5])?;
        let metrics = BTreeMap::from([
            (TOP1.to_string(), single(acc[0])),
            (TOP5.to_string(), single(acc[1])),
        ]);
        rows.push(ReportRow {
            model: kind.name().to_string(),
            metrics,
        });
    }
    Ok(EvalReport::new(
        ReportKind::Recommendation,
        1,
        fingerprint(parts),
        rows,
    ))
}

fn help_label(model: &HelpModel) -> &'static str {
    match model {
        HelpModel::Forest(_) => HelpModelSpec::Forest.label(),
        HelpModel::Lstm(m) if m.config.time.enabled() => HelpModelSpec::LstmTimed.label(),
        HelpModel::Lstm(_) => HelpModelSpec::LstmCommands.label(),
    }
}

fn frozen_help(dir: &DataDir, knobs: &Knobs, kinds: &[ModelKind]) -> CliResult<EvalReport> {
    let vocab = dir.vocab()?;
    let test = dir.help_examples(Split::Test)?;
    let mut parts = vec![
        settings_digest(knobs)?,
        file_bytes(&dir.vocab_path())?,
        file_bytes(&dir.help_path(Split::Test))?,
    ];
    let mut rows = Vec::new();
    for &kind in kinds {
        parts.push(file_bytes(&dir.model_path(kind))?);
        let model = dir.help_model(kind, &vocab)?;
        let metrics = evaluate_help(&model, &test, knobs.threshold())?;
        rows.push(ReportRow {
            model: help_label(&model).to_string(),
            metrics: metrics.into_iter().map(|(k, v)| (k, single(v))).collect(),
        });
    }
    Ok(EvalReport::new(
        ReportKind::Help,
        1,
        fingerprint(parts),
        rows,
    ))
}

fn retrain_recommenders(
    dir: &DataDir,
    knobs: &Knobs,
    kinds: &[ModelKind],
) -> CliResult<EvalReport> {
    let vocab = dir.vocab()?;
    let [train, val, test] = Split::ALL.map(|s| dir.sequences(s));
    let (train, val, test) = (train?, val?, test?);
    let mut parts = vec![settings_digest(knobs)?, file_bytes(&dir.vocab_path())?];
    for s in Split::ALL {
        parts.push(file_bytes(&dir.sequences_path(s))?);
    }
    let settings = knobs.recommender();
    let summaries = run_trials(knobs.runs(), knobs.seed(), |seed| {
        recommendation_trial(kinds, &vocab, &train, &val, &test, &settings, seed)
    })?;
    let order: Vec<String> = kinds.iter().map(|k| k.name().to_string()).collect();
    Ok(taskrec_core::experiment::report_from_summaries(
        ReportKind::Recommendation,
        knobs.runs(),
        fingerprint(parts),
        summaries,
        &order,
    ))
}

fn retrain_help(dir: &DataDir, knobs: &Knobs, kinds: &[ModelKind]) -> CliResult<EvalReport> {
    let vocab = dir.vocab()?;
    let [train, val, test] = Split::ALL.map(|s| dir.help_examples(s));
    let (train, val, test) = (train?, val?, test?);
    let mut parts = vec![settings_digest(knobs)?, file_bytes(&dir.vocab_path())?];
    for s in Split::ALL {
        parts.push(file_bytes(&dir.help_path(s))?);
    }
    let mut specs = Vec::new();
    if kinds.contains(&ModelKind::HelpRf) {
        specs.push(HelpModelSpec::Forest);
    }
    if kinds.contains(&ModelKind::HelpLstm) {
        specs.extend([HelpModelSpec::LstmCommands, HelpModelSpec::LstmTimed]);
    }
    let settings = knobs.help();
    let summaries = run_trials(knobs.runs(), knobs.seed(), |seed| {
        help_trial(&specs, &vocab, &train, &val, &test, &settings, seed)
    })?;
    let order: Vec<String> = specs.iter().map(|s| s.label().to_string()).collect();
    Ok(taskrec_core::experiment::report_from_summaries(
        ReportKind::Help,
        knobs.runs(),
        fingerprint(parts),
        summaries,
        &order,
    ))
}
