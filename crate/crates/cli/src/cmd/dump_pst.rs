//! `taskrec dump-pst`: print a fitted suffix tree, or every per-task tree of
//! the task-weighted ensemble.

use std::fmt::Write as _;

use taskrec_core::experiment::Recommender;
use taskrec_core::persist::ModelKind;

use crate::cmd::DataArgs;
use crate::data::Output;
use crate::error::{CliError, CliResult};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    pub data: DataArgs,
    /// `pst` or `taskpst`
    #[arg(long, default_value = "pst", value_parser = parse_tree_model)]
    pub model: ModelKind,
}

fn parse_tree_model(name: &str) -> Result<ModelKind, String> {
    match ModelKind::parse(name) {
        Some(k @ (ModelKind::Pst | ModelKind::Taskpst)) => Ok(k),
        _ => Err("expected pst or taskpst".to_string()),
    }
}

pub fn run(args: Args, out: &Output) -> CliResult<()> {
    let dir = args.data.dir();
    let vocab = dir.vocab()?;
    let text = match dir.recommender(args.model, &vocab)? {
        Recommender::Pst(tree) => tree.dump(&vocab),
        Recommender::TaskPst(ens) => {
            let mut s = String::new();
            for (z, tree) in ens.trees.iter().enumerate() {
                let _ = writeln!(s, "# task {z}");
                s.push_str(&tree.dump(&vocab));
            }
            s
        }
        _ => return Err(CliError::Internal("unexpected model type".into())),
    };
    out.text(&text);
    Ok(())
}
