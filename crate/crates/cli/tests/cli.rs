//! Black-box tests of the `taskrec` binary.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

fn taskrec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taskrec"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn taskrec_stdin(dir: &Path, args: &[&str], input: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_taskrec"))
        .args(args)
        .current_dir(dir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .expect("binary runs");
    child
        .stdin
        .take()
        .unwrap()
        .write_all(input.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

#[track_caller]
fn ok(dir: &Path, args: &[&str]) -> String {
    let out = taskrec(dir, args);
    assert!(
        out.status.success(),
        "`taskrec {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[track_caller]
fn fails(dir: &Path, args: &[&str], code: i32) -> String {
    let out = taskrec(dir, args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}",
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8(out.stderr).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn read_jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Five sessions over commands `a`..`e`, `h` (help), `x`, `y`, plus one
/// malformed line.
const FIXTURE_LOG: &str = r#"{"user":"u1","session":"s1","command":"a","ts":0}
{"user":"u1","session":"s1","command":"b","ts":1}
{"user":"u1","session":"s1","command":"c","ts":2}
{"user":"u1","session":"s1","command":"d","ts":3}
{"user":"u1","session":"s1","command":"e","ts":4}
{"user":"u2","session":"s2","command":"a","ts":0}
{"user":"u2","session":"s2","command":"a","ts":1}
{"user":"u2","session":"s2","command":"a","ts":2}
{"user":"u2","session":"s2","command":"b","ts":3}
{"user":"u2","session":"s2","command":"c","ts":4}
not json
{"user":"u3","session":"s3","command":"a","ts":0}
{"user":"u3","session":"s3","command":"b","ts":1}
{"user":"u3","session":"s3","command":"c","ts":2}
{"user":"u3","session":"s3","command":"d","ts":30}
{"user":"u3","session":"s3","command":"h","ts":40}
{"user":"u3","session":"s3","command":"e","ts":41}
{"user":"u4","session":"s4","command":"x","ts":0}
{"user":"u4","session":"s4","command":"y","ts":1}
{"user":"u5","session":"s5","command":"h","ts":0}
{"user":"u5","session":"s5","command":"a","ts":1}
{"user":"u5","session":"s5","command":"b","ts":2}
{"user":"u5","session":"s5","command":"c","ts":3}
"#;

const FIXTURE_ARGS: [&str; 8] = [
    "--length",
    "4",
    "--max-repeat",
    "2",
    "--min-context",
    "2",
    "--negative-ratio",
    "1",
];

fn write_fixture(dir: &Path) {
    fs::write(dir.join("log.jsonl"), FIXTURE_LOG).unwrap();
    fs::write(dir.join("help.txt"), "h\n").unwrap();
}

fn ingest_fixture(dir: &Path, out: &str, extra: &[&str]) -> Value {
    let mut args = vec![
        "ingest",
        "--log",
        "log.jsonl",
        "--help-list",
        "help.txt",
        "--out",
        out,
        "-q",
    ];
    args.extend(FIXTURE_ARGS);
    args.extend(extra);
    ok(dir, &args);
    read_json(&dir.join(out).join("stats.json"))
}

#[test]
fn ingest_stats_match_a_hand_count() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture(tmp.path());
    let stats = ingest_fixture(tmp.path(), "data", &[]);
    assert_eq!(stats["sessions"], 5);
    assert_eq!(stats["skipped_lines"], 1);
    assert_eq!(stats["denylisted_sessions"], 0);
    assert_eq!(stats["vocab_size"], 8);
    // s4 is too short; s1, s2, s3 and s5 survive.
    assert_eq!(stats["sequences"], 4);
    // s3 asks for help after 4 commands; s5 asks before any context.
    assert_eq!(stats["help_positives"], 1);
    assert_eq!(stats["help_negatives"], 1);
    let users: u64 = stats["users"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(users, 5);
    let seqs: u64 = stats["sequences_by_split"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(seqs, 4);

    let data = tmp.path().join("data");
    let mut all = Vec::new();
    for split in ["train", "val", "test"] {
        all.extend(read_jsonl(&data.join(format!("{split}.jsonl"))));
    }
    for s in &all {
        assert_eq!(s["commands"].as_array().unwrap().len(), 4);
    }
    let mut help = Vec::new();
    for split in ["train", "val", "test"] {
        let p = data.join(format!("help_{split}.jsonl"));
        if p.exists() {
            help.extend(read_jsonl(&p));
        }
    }
    let positive: Vec<&Value> = help.iter().filter(|e| e["label"] == "help").collect();
    assert_eq!(positive.len(), 1);
    assert_eq!(positive[0]["commands"].as_array().unwrap().len(), 4);
    assert_eq!(
        positive[0]["gaps"],
        serde_json::json!([0.0, 1.0, 1.0, 28.0])
    );
    assert_eq!(positive[0]["user"], "u3");
}

#[test]
fn ingest_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture(tmp.path());
    ingest_fixture(tmp.path(), "a", &[]);
    ingest_fixture(tmp.path(), "b", &[]);
    for f in [
        "vocab.json",
        "train.jsonl",
        "val.jsonl",
        "test.jsonl",
        "stats.json",
    ] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn ingest_denylist_behaviour() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture(tmp.path());
    let plain = ingest_fixture(tmp.path(), "plain", &[]);
    fs::write(tmp.path().join("empty.txt"), "").unwrap();
    let empty = ingest_fixture(tmp.path(), "empty", &["--denylist", "empty.txt"]);
    assert_eq!(plain, empty);

    fs::write(tmp.path().join("deny.txt"), "x\n# comment\ny\n").unwrap();
    let denied = ingest_fixture(tmp.path(), "denied", &["--denylist", "deny.txt"]);
    assert_eq!(denied["denylisted_sessions"], 1);
    assert_eq!(denied["vocab_size"], 6);
    assert_eq!(denied["sequences"], 4);
}

#[test]
fn ingest_rejects_a_help_list_covering_every_command() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture(tmp.path());
    fs::write(tmp.path().join("help.txt"), "a\nb\nc\nd\ne\nh\nx\ny\n").unwrap();
    let mut args = vec![
        "ingest",
        "--log",
        "log.jsonl",
        "--help-list",
        "help.txt",
        "--out",
        "data",
    ];
    args.extend(FIXTURE_ARGS);
    let err = fails(tmp.path(), &args, 1);
    assert!(err.contains("help-free"), "{err}");
}

#[test]
fn inputs_are_left_unmodified() {
    let tmp = tempfile::tempdir().unwrap();
    write_fixture(tmp.path());
    ingest_fixture(tmp.path(), "data", &[]);
    assert_eq!(
        fs::read_to_string(tmp.path().join("log.jsonl")).unwrap(),
        FIXTURE_LOG
    );
    assert_eq!(
        fs::read_to_string(tmp.path().join("help.txt")).unwrap(),
        "h\n"
    );
}

#[test]
fn synth_is_deterministic_and_labelled() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &["synth", "--out", "a", "--docs", "200", "--seed", "3", "-q"],
    );
    ok(
        dir,
        &["synth", "--out", "b", "--docs", "200", "--seed", "3", "-q"],
    );
    for f in [
        "corpus.jsonl",
        "labels.jsonl",
        "log.jsonl",
        "vocab.json",
        "help_commands.txt",
    ] {
        assert_eq!(
            fs::read(dir.join("a").join(f)).unwrap(),
            fs::read(dir.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let labels = read_jsonl(&dir.join("a/labels.jsonl"));
    assert_eq!(labels.len(), 200);
    assert_eq!(read_jsonl(&dir.join("a/corpus.jsonl")).len(), 200);
    assert!(labels
        .iter()
        .all(|l| (0..3).contains(&l["task"].as_u64().unwrap())));
    let tasks: std::collections::BTreeSet<u64> =
        labels.iter().map(|l| l["task"].as_u64().unwrap()).collect();
    assert_eq!(tasks.len(), 3);
    assert!(labels.iter().any(|l| l["help"] == true));
    ok(
        dir,
        &["synth", "--out", "c", "--docs", "200", "--seed", "4", "-q"],
    );
    assert_ne!(
        fs::read(dir.join("a/corpus.jsonl")).unwrap(),
        fs::read(dir.join("c/corpus.jsonl")).unwrap()
    );
}

/// A small synthetic data directory at `<dir>/data`.
fn prepared(dir: &Path) {
    ok(
        dir,
        &[
            "synth", "--out", "syn", "--docs", "400", "--seed", "1", "-q",
        ],
    );
    ok(
        dir,
        &[
            "ingest",
            "--log",
            "syn/log.jsonl",
            "--help-list",
            "syn/help_commands.txt",
            "--out",
            "data",
            "-q",
        ],
    );
}

#[test]
fn task_models_require_a_fitted_btm() {
    let tmp = tempfile::tempdir().unwrap();
    prepared(tmp.path());
    for model in ["taskpst", "taskrnn", "jtcrnn"] {
        let err = fails(tmp.path(), &["train", model, "--data", "data"], 1);
        assert!(err.contains("run fit-btm first"), "{err}");
    }
}

#[test]
fn firstmm_counts_match_the_training_file() {
    let tmp = tempfile::tempdir().unwrap();
    prepared(tmp.path());
    ok(tmp.path(), &["train", "firstmm", "--data", "data", "-q"]);
    let model = read_json(&tmp.path().join("data/models/firstmm.json"));
    let v = model["model"]["vocab_size"].as_u64().unwrap() as usize;
    let mut want = vec![0u64; v * v];
    for s in read_jsonl(&tmp.path().join("data/train.jsonl")) {
        let c: Vec<usize> = s["commands"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_u64().unwrap() as usize)
            .collect();
        for w in c.windows(2) {
            want[w[0] * v + w[1]] += 1;
        }
    }
    let got: Vec<u64> = model["model"]["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap())
        .collect();
    assert_eq!(got, want);
}

#[test]
fn short_vrnn_run_is_fast() {
    let tmp = tempfile::tempdir().unwrap();
    prepared(tmp.path());
    let t = Instant::now();
    let out = ok(
        tmp.path(),
        &[
            "train",
            "vrnn",
            "--data",
            "data",
            "--epochs",
            "2",
            "--hidden-dim",
            "32",
            "--embed-dim",
            "16",
        ],
    );
    assert!(t.elapsed() < Duration::from_secs(60), "{:?}", t.elapsed());
    let epochs = out.lines().filter(|l| l.contains("\"epoch\"")).count();
    assert!((1..=3).contains(&epochs), "{out}");
    let last: Value = out
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .find(|v| v["event"] == "final")
        .expect("final metrics record");
    let (t1, t5) = (
        last["top1"].as_f64().unwrap(),
        last["top5"].as_f64().unwrap(),
    );
    assert!((0.0..=1.0).contains(&t1) && t5 >= t1);
}

#[test]
fn evaluate_is_reproducible_and_checks_vocabulary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepared(dir);
    for m in ["pst", "firstmm", "help-rf"] {
        ok(dir, &["train", m, "--data", "data", "-q"]);
    }
    let args = [
        "evaluate",
        "--data",
        "data",
        "--models",
        "pst,firstmm,help-rf",
        "-q",
    ];
    let first = ok(dir, &args);
    let report = fs::read(dir.join("data/reports/recommendation.json")).unwrap();
    let second = ok(dir, &args);
    assert_eq!(first, second);
    assert_eq!(
        report,
        fs::read(dir.join("data/reports/recommendation.json")).unwrap()
    );
    assert!(dir.join("data/reports/help.txt").exists());

    let (fm, pst) = (first.find("FirstMM").unwrap(), first.find("PST").unwrap());
    assert!(fm < pst, "models are listed in canonical order:\n{first}");

    // Re-ingesting a different corpus changes the vocabulary hash.
    ok(
        dir,
        &[
            "synth", "--out", "syn2", "--docs", "400", "--seed", "2", "-q",
        ],
    );
    fs::write(dir.join("syn2/help_commands.txt"), "help_open\n").unwrap();
    let mut log = fs::read_to_string(dir.join("syn2/log.jsonl")).unwrap();
    log.push_str(r#"{"user":"extra","session":"x","command":"brand_new","ts":0}"#);
    log.push('\n');
    fs::write(dir.join("syn2/log.jsonl"), log).unwrap();
    ok(
        dir,
        &[
            "ingest",
            "--log",
            "syn2/log.jsonl",
            "--help-list",
            "syn2/help_commands.txt",
            "--out",
            "data2",
            "-q",
        ],
    );
    let err = fails(
        dir,
        &[
            "evaluate",
            "--data",
            "data2",
            "--model-dir",
            "data/models",
            "--models",
            "pst",
        ],
        1,
    );
    assert!(err.to_lowercase().contains("vocab"), "{err}");
}

#[test]
fn demo_session_behaviour() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepared(dir);
    for m in ["pst", "help-rf"] {
        ok(dir, &["train", m, "--data", "data", "-q"]);
    }
    let script =
        "task00_cmd00 3\ntask00_cmd01 3\nnot_a_command\ntask0_cmd02 2\ntask00_cmd02 2\nquit\n";
    let args = [
        "demo",
        "--data",
        "data",
        "--model",
        "pst",
        "--help-model",
        "help-rf",
        "--jsonl",
    ];
    let a = taskrec_stdin(dir, &args, script);
    let b = taskrec_stdin(dir, &args, script);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let steps: Vec<Value> = text
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v.get("step").is_some())
        .collect();
    assert_eq!(steps.len(), 3, "{text}");
    assert!(steps.iter().all(|s| s["help"]["status"] == "warming_up"));
    for (t, s) in steps.iter().enumerate() {
        assert_eq!(s["t"], t);
        assert!(s["p_help"].is_null());
        assert_eq!(s["alarm"], false);
    }
    assert_eq!(steps[0]["gap"], 0.0);
    assert_eq!(steps[1]["gap"], 3.0);
    assert_eq!(steps[0]["recommendations"].as_array().unwrap().len(), 5);
    assert!(
        text.contains("task00_cmd02"),
        "suggestion for a near miss:\n{text}"
    );

    let plain = taskrec_stdin(
        dir,
        &[
            "demo",
            "--data",
            "data",
            "--model",
            "pst",
            "--help-model",
            "help-rf",
        ],
        script,
    );
    let plain = String::from_utf8(plain.stdout).unwrap();
    assert!(plain.contains("help: warming up"), "{plain}");
    assert!(plain.contains("no help alert"), "{plain}");
}

#[test]
fn config_precedence_and_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepared(dir);
    fs::write(dir.join("cfg.json"), r#"{"topics": 2, "iterations": 20}"#).unwrap();
    ok(
        dir,
        &["fit-btm", "--data", "data", "--config", "cfg.json", "-q"],
    );
    assert_eq!(
        read_json(&dir.join("data/models/btm.json"))["model"]["theta"]
            .as_array()
            .unwrap()
            .len(),
        2
    );
    ok(
        dir,
        &[
            "fit-btm", "--data", "data", "--config", "cfg.json", "--topics", "4", "-q",
        ],
    );
    assert_eq!(
        read_json(&dir.join("data/models/btm.json"))["model"]["theta"]
            .as_array()
            .unwrap()
            .len(),
        4
    );

    fs::write(dir.join("bad.json"), r#"{"topcs": 2}"#).unwrap();
    let err = fails(
        dir,
        &["fit-btm", "--data", "data", "--config", "bad.json"],
        1,
    );
    assert!(err.contains("topcs"), "{err}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert!(taskrec(dir, &["--version"]).status.success());
    assert!(taskrec(dir, &["--help"]).status.success());
    fails(dir, &["train", "lda", "--data", "data"], 1);
    fails(dir, &["frobnicate"], 1);
    fails(
        dir,
        &["ingest", "--log", "missing.jsonl", "--out", "data"],
        2,
    );
    let err = fails(dir, &["fit-btm", "--data", "nowhere"], 2);
    assert!(err.contains("nowhere"), "{err}");
}
