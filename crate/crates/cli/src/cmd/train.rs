//! `taskrec train <model>`: train and save one model, streaming per-epoch
//! metrics and printing final validation metrics.

use std::path::Path;

use serde_json::json;

use taskrec_core::eval::topk_accuracies;
use taskrec_core::experiment::{evaluate_help, train_help_model, train_recommender, HelpModelSpec};
use taskrec_core::persist::ModelKind;

use crate::cmd::{parse_trainable, DataArgs};
use crate::data::{DataDir, Output, Split};
use crate::error::{CliError, CliResult};
use crate::knobs::Knobs;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// One of firstmm, pst, taskpst, vrnn, taskrnn, jtcrnn, help-rf, help-lstm
    #[arg(value_parser = parse_trainable)]
    pub model: ModelKind,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub knobs: Knobs,
}

pub fn run(args: Args, config: Option<&Path>, out: &Output) -> CliResult<()> {
    let knobs = args.knobs.resolve(config)?;
    let dir = args.data.dir();
    if args.model.is_help() {
        train_help(args.model, &dir, &knobs, out)
    } else {
        train_rec(args.model, &dir, &knobs, out)
    }
}

fn train_rec(kind: ModelKind, dir: &DataDir, knobs: &Knobs, out: &Output) -> CliResult<()> {
    let vocab = dir.vocab()?;
    let train = dir.sequences(Split::Train)?;
    let val = dir.sequences(Split::Val)?;
    let btm = if kind.needs_btm() {
        if !dir.has_model(ModelKind::Btm) {
            return Err(CliError::validation(format!(
                "{kind} needs a fitted task model: run fit-btm first"
            )));
        }
        Some(dir.btm(&vocab)?)
    } else {
        None
    };
    let settings = knobs.recommender();
    let model = train_recommender(
        kind,
        &vocab,
        &train,
        &val,
        btm.as_ref(),
        &settings,
        knobs.seed(),
        |e| {
            out.event(&json!({
                "event": "epoch", "model": kind, "epoch": e.epoch, "loss": e.loss,
                "loss_ce": e.loss_ce, "loss_kl": e.loss_kl, "val_top1": e.val_top1,
            }))
        },
    )?;
    let path = dir.save_recommender(kind, &vocab, &model)?;
    let final_metrics = if val.is_empty() {
        json!({ "event": "final", "model": kind, "split": "val", "sequences": 0 })
    } else {
        let acc = topk_accuracies(&model.predictor(btm.as_ref())?, &val, &[1, 5])?;
        json!({ "event": "final", "model": kind, "split": "val", "top1": acc[0], "top5": acc[1] })
    };
    out.result(&final_metrics);
    out.event(&json!({ "event": "saved", "model": kind, "path": path.display().to_string() }));
    Ok(())
}

fn train_help(kind: ModelKind, dir: &DataDir, knobs: &Knobs, out: &Output) -> CliResult<()> {
    let vocab = dir.vocab()?;
    let train = dir.help_examples(Split::Train)?;
    let val = dir.help_examples(Split::Val)?;
    let spec = match kind {
        ModelKind::HelpRf => HelpModelSpec::Forest,
        _ if knobs.time_input().enabled() => HelpModelSpec::LstmTimed,
        _ => HelpModelSpec::LstmCommands,
    };
    let settings = knobs.help();
    let model = train_help_model(spec, &vocab, &train, &val, &settings, knobs.seed(), |e| {
        out.event(&json!({ "event": "epoch", "model": kind, "epoch": e.epoch, "loss": e.loss, "val_auroc": e.val_auroc }))
    })?;
    let path = dir.save_help_model(kind, &vocab, &model)?;
    match evaluate_help(&model, &val, settings.threshold) {
        Ok(m) => out.result(&json!({ "event": "final", "model": kind, "variant": spec.label(), "split": "val", "metrics": m })),
        Err(e) => eprintln!("warning: no validation metrics: {e}"),
    }
    out.event(&json!({ "event": "saved", "model": kind, "path": path.display().to_string() }));
    Ok(())
}
