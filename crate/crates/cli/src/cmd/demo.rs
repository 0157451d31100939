//! `taskrec demo`: an interactive session.
//!
//! Each input line is a command name, optionally followed by the seconds
//! elapsed since the previous command (wall-clock time is used otherwise).
//! After every accepted command the session prints the most likely current
//! task, the top-k next-command recommendations and the help probability,
//! with an alert marker once it crosses the threshold. `quit` ends the
//! session; unknown commands get suggestions and leave the state unchanged.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use taskrec_core::eval::NextCommandModel;
use taskrec_core::experiment::HelpModel;
use taskrec_core::help::{HelpForest, HelpLstm, HelpStream};
use taskrec_core::persist::ModelKind;
use taskrec_core::{BitermModel, CommandId, CommandSequence, Vocabulary};

use crate::cmd::recommend::{optional_btm, recommendations_json};
use crate::cmd::{parse_help_model, parse_recommender, DataArgs};
use crate::data::Output;
use crate::error::{CliError, CliResult, WithPath};
use crate::knobs::Knobs;

const ALERT: &str = "[!] HELP ALERT";

#[derive(clap::Args, Debug)]
pub struct Args {
    #[command(flatten)]
    pub data: DataArgs,
    /// Recommender to use
    #[arg(long, default_value = "jtcrnn", value_parser = parse_recommender)]
    pub model: ModelKind,
    /// Help model to use
    #[arg(long, default_value = "help-lstm", value_parser = parse_help_model)]
    pub help_model: ModelKind,
    /// Read the session from a file instead of standard input
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Print one JSON record per input line instead of text
    #[arg(long)]
    pub jsonl: bool,
    #[command(flatten)]
    pub knobs: Knobs,
}

enum HelpState<'a> {
    Lstm(HelpStream<'a>),
    Forest {
        model: &'a HelpForest,
        k: usize,
        seq: CommandSequence,
    },
}

impl HelpState<'_> {
    fn push(&mut self, c: CommandId, gap: f64) -> CliResult<Option<f64>> {
        match self {
            HelpState::Lstm(s) => Ok(s.push(c, gap)?),
            HelpState::Forest { model, k, seq } => {
                seq.commands.push(c);
                seq.gaps.get_or_insert_with(Vec::new).push(gap);
                if seq.len() > *k {
                    Ok(Some(model.score(seq)?))
                } else {
                    Ok(None)
                }
            }
        }
    }
}

struct Session<'a> {
    vocab: &'a Vocabulary,
    btm: Option<&'a BitermModel>,
    predictor: Box<dyn NextCommandModel + 'a>,
    help: HelpState<'a>,
    threshold: f64,
    top_k: usize,
    prefix: Vec<CommandId>,
    last: Option<Instant>,
    first_alarm: Option<usize>,
}

enum Line {
    Quit,
    Skip,
    Step(Value),
    Problem(Value),
}

impl Session<'_> {
    fn handle(&mut self, line: &str) -> CliResult<Line> {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let (name, dt) = match tokens.as_slice() {
            [] => return Ok(Line::Skip),
            ["quit"] => return Ok(Line::Quit),
            [name] => (*name, None),
            [name, dt] => match dt.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => (*name, Some(v)),
                _ => {
                    return Ok(Line::Problem(
                        json!({ "error": "bad_gap", "input": line.trim() }),
                    ))
                }
            },
            _ => {
                return Ok(Line::Problem(
                    json!({ "error": "bad_input", "input": line.trim() }),
                ))
            }
        };
        let Some(c) = self.vocab.id(name) else {
            return Ok(Line::Problem(json!({
                "error": "unknown_command", "command": name, "suggestions": self.vocab.suggest(name, 3),
            })));
        };
        let now = Instant::now();
        let gap = match (self.last, dt) {
            (None, _) => 0.0,
            (Some(_), Some(dt)) => dt,
            (Some(t), None) => now.duration_since(t).as_secs_f64(),
        };
        self.last = Some(now);
        let step = self.prefix.len();
        self.prefix.push(c);

        let task = match self.btm {
            Some(b) => {
                let d = b.infer(&self.prefix)?;
                json!({ "id": d.argmax(), "p": d.probs()[d.argmax()] })
            }
            None => Value::Null,
        };
        let recs = self.predictor.recommend(&self.prefix, self.top_k)?;
        let p_help = self.help.push(c, gap)?;
        let alarm = p_help.is_some_and(|p| p >= self.threshold);
        if alarm && self.first_alarm.is_none() {
            self.first_alarm = Some(step);
        }
        let help = match p_help {
            None => json!({ "status": "warming_up" }),
            Some(p) => json!({ "status": "ready", "p": p, "alert": alarm }),
        };
        Ok(Line::Step(json!({
            "t": step, "p_help": p_help, "alarm": alarm,
            "step": step, "command": name, "gap": gap, "task": task,
            "recommendations": recommendations_json(self.vocab, &recs), "help": help,
        })))
    }

    fn summary(&self) -> Value {
        json!({ "event": "end", "commands": self.prefix.len(), "alarm": self.first_alarm.is_some(), "first_alarm_step": self.first_alarm })
    }
}

fn render_step(v: &Value) -> String {
    let task = match &v["task"] {
        Value::Null => "n/a".to_string(),
        t => format!("{} (p={:.2})", t["id"], t["p"].as_f64().unwrap_or(0.0)),
    };
    let recs: Vec<String> = v["recommendations"]
        .as_array()
        .map(|a| {
            a.iter()
                .map(|r| {
                    format!(
                        "{} {:.3}",
                        r["command"].as_str().unwrap_or("?"),
                        r["p"].as_f64().unwrap_or(0.0)
                    )
                })
                .collect()
        })
        .unwrap_or_default();
    let help = &v["help"];
    let help = if help["status"] == "warming_up" {
        "warming up".to_string()
    } else {
        let p = help["p"].as_f64().unwrap_or(0.0);
        if help["alert"] == true {
            format!("p={p:.3}  {ALERT}")
        } else {
            format!("p={p:.3}")
        }
    };
    format!(
        "[{}] {}\n  task: {task}\n  next: {}\n  help: {help}",
        v["step"],
        v["command"].as_str().unwrap_or("?"),
        recs.join(", ")
    )
}

fn render_problem(v: &Value) -> String {
    match v["error"].as_str() {
        Some("unknown_command") => {
            let s: Vec<&str> = v["suggestions"]
                .as_array()
                .map(|a| a.iter().filter_map(Value::as_str).collect())
                .unwrap_or_default();
            format!(
                "unknown command `{}`; did you mean: {}?",
                v["command"].as_str().unwrap_or("?"),
                s.join(", ")
            )
        }
        Some("bad_gap") => format!(
            "could not read a gap in `{}`; expected `command [seconds]`",
            v["input"].as_str().unwrap_or("")
        ),
        _ => format!(
            "expected `command [seconds]`, got `{}`",
            v["input"].as_str().unwrap_or("")
        ),
    }
}

fn render_summary(v: &Value) -> String {
    match v["first_alarm_step"].as_u64() {
        Some(s) => format!(
            "session ended after {} commands; help alert first raised at step {s}",
            v["commands"]
        ),
        None => format!(
            "session ended after {} commands; no help alert",
            v["commands"]
        ),
    }
}

pub fn run(args: Args, config: Option<&Path>, out: &Output) -> CliResult<()> {
    let knobs = args.knobs.resolve(config)?;
    let dir = args.data.dir();
    let vocab = dir.vocab()?;
    let btm = optional_btm(&dir, args.model, &vocab)?;
    let recommender = dir.recommender(args.model, &vocab)?;
    let help_model = dir.help_model(args.help_model, &vocab)?;
    let lstm: Option<HelpLstm> = match &help_model {
        HelpModel::Lstm(m) => {
            let mut m = m.clone();
            m.config.k = knobs.min_context.unwrap_or(m.config.k);
            Some(m)
        }
        HelpModel::Forest(_) => None,
    };
    let help = match (&help_model, &lstm) {
        (_, Some(m)) => HelpState::Lstm(m.stream(knobs.threshold())),
        (HelpModel::Forest(f), None) => HelpState::Forest {
            model: f,
            k: knobs.min_context(),
            seq: CommandSequence::with_gaps("demo", Vec::new(), Vec::new()),
        },
        _ => return Err(CliError::Internal("help model state".into())),
    };
    let mut session = Session {
        vocab: &vocab,
        btm: btm.as_ref(),
        predictor: recommender.predictor(btm.as_ref())?,
        help,
        threshold: knobs.threshold(),
        top_k: knobs.top_k(),
        prefix: Vec::new(),
        last: None,
        first_alarm: None,
    };

    let (reader, source): (Box<dyn BufRead>, String) = match &args.input {
        Some(p) => (
            Box::new(BufReader::new(File::open(p).at(p)?)),
            p.display().to_string(),
        ),
        None => (Box::new(std::io::stdin().lock()), "<stdin>".to_string()),
    };
    if !args.jsonl {
        out.text("type a command, optionally followed by the seconds since the previous one; `quit` ends the session");
    }
    for line in reader.lines() {
        let line = line.map_err(|e| CliError::Io(format!("{source}: {e}")))?;
        match session.handle(&line)? {
            Line::Quit => break,
            Line::Skip => {}
            Line::Step(v) if args.jsonl => out.result(&v),
            Line::Step(v) => out.text(&render_step(&v)),
            Line::Problem(v) if args.jsonl => out.result(&v),
            Line::Problem(v) => out.text(&render_problem(&v)),
        }
    }
    let summary = session.summary();
    if args.jsonl {
        out.result(&summary);
    } else {
        out.text(&render_summary(&summary));
    }
    Ok(())
}
