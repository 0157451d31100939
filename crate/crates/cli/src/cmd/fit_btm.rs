//! `taskrec fit-btm`: fit the biterm task model on the training split.

use std::path::Path;

use taskrec_core::persist::ModelKind;
use taskrec_core::topics::{fit_btm, ConfigWarning};

use crate::cmd::DataArgs;
use crate::data::{Output, Split};
use crate::error::CliResult;
use crate::knobs::Knobs;

const TOP_COMMANDS: usize = 5;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub knobs: Knobs,
}

pub fn run(args: Args, config: Option<&Path>, out: &Output) -> CliResult<()> {
    let knobs = args.knobs.resolve(config)?;
    let dir = args.data.dir();
    let vocab = dir.vocab()?;
    let train = dir.sequences(Split::Train)?;
    let cfg = knobs.btm();
    for w in cfg.validate(vocab.len())? {
        match w {
            ConfigWarning::TooManyTopics { k, biterm_types } => {
                eprintln!("warning: K = {k} exceeds the {biterm_types} possible biterm types")
            }
        }
    }
    let model = fit_btm(&train, &vocab, &cfg)?;
    for z in 0..model.k() {
        let top: Vec<_> = model
            .top_commands(z, TOP_COMMANDS)?
            .into_iter()
            .map(|(c, p)| serde_json::json!({ "command": vocab.name(c), "p": p }))
            .collect();
        out.event(&serde_json::json!({ "event": "topic", "task": z, "theta": model.theta[z], "top": top }));
    }
    let path = dir.save(ModelKind::Btm, &vocab, &model)?;
    out.result(&serde_json::json!({ "event": "saved", "model": "btm", "k": model.k(), "path": path.display().to_string() }));
    Ok(())
}
