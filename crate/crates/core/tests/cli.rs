use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use semisent::pseudolab::load_external_pseudo_labels;

const SMALL: &[&str] = &[
    "--synth.n_train", "60", "--synth.n_val", "20", "--synth.n_eval", "20",
    "--synth.n_unlabeled", "40", "--synth.n_text", "200",
];

const FAST: &[&str] = &[
    "--baseline.epochs", "2", "--pretrain.epochs", "1", "--finetune.epochs", "2",
    "--model.fc_dim", "6", "--model.blstm_hidden", "5", "--model.attention_dim", "4",
];

fn semisent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semisent")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = semisent(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) -> std::path::PathBuf {
    let corpus = dir.join("corpus");
    let mut args = vec!["synth", "--out", s(&corpus)];
    args.extend_from_slice(SMALL);
    ok(&args);
    corpus
}

#[test]
fn exit_codes() {
    assert_eq!(semisent(&["--help"]).status.code(), Some(0));
    assert_eq!(semisent(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(semisent(&["run", "--no.such_key", "1"]).status.code(), Some(1));
    assert_eq!(semisent(&["eval", "--predictions", "/nonexistent/p.csv"]).status.code(), Some(2));
    let out = semisent(&["run", "--baseline.lr=abc"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("baseline.lr"));
}

#[test]
fn gradcheck_subcommand_passes() {
    let out = ok(&["gradcheck", "--seeds", "1"]);
    assert_eq!(out.lines().count(), 6);
    assert!(out.lines().all(|l| l.ends_with("ok")), "{out}");
}

#[test]
fn prepare_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let first = ok(&["prepare", s(&corpus.join("train.jsonl")), "--out", s(&a)]);
    assert!(first.contains("kept"));
    ok(&["prepare", s(&a.join("train.jsonl")), "--out", s(&b)]);
    assert_eq!(fs::read(a.join("train.jsonl")).unwrap(), fs::read(b.join("train.jsonl")).unwrap());
    assert_eq!(fs::read_to_string(b.join("train_discarded.csv")).unwrap(), "id,line\n");
}

#[test]
fn run_then_eval_reproduces_reports() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let out = dir.path().join("run");
    let mut args = vec!["run", "--config", "experiment.conf", "--out", s(&out)];
    args.extend_from_slice(FAST);
    let conf = corpus.join("experiment.conf");
    args[2] = s(&conf);
    let stdout = ok(&args);
    assert!(stdout.contains("theta_f eval"), "{stdout}");

    // Metrics re-derived from the predictions file match the report.
    let report = fs::read_to_string(out.join("reports/theta_f_eval.csv")).unwrap();
    let rederived = ok(&["eval", "--predictions", s(&out.join("predictions/theta_f_eval.csv"))]);
    assert_eq!(rederived, report);

    // Scoring the saved model again gives the same report.
    let again = dir.path().join("again");
    let stdout = ok(&[
        "eval", "--model", s(&out.join("models/baseline.sfm")),
        "--manifest", s(&corpus.join("eval.jsonl")), "--out", s(&again),
    ]);
    assert_eq!(stdout, fs::read_to_string(out.join("reports/baseline_eval.csv")).unwrap());

    let labels = load_external_pseudo_labels(&out.join("pseudo_labels.csv")).unwrap();
    assert_eq!(labels.len(), 100);

    // A second run into the same directory is refused.
    assert_eq!(semisent(&args).status.code(), Some(1));
}

#[test]
fn label_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth(dir.path());
    let conf = corpus.join("experiment.conf");

    let out = dir.path().join("label");
    let report = ok(&["label", "--config", s(&conf), "--out", s(&out)]);
    assert!(report.starts_with("transcript,unweighted_REC,weighted_REC\n"));
    assert_eq!(report.lines().count(), 3);
    for source in ["gt", "asr"] {
        let labels = load_external_pseudo_labels(&out.join(format!("pseudo_labels_{source}.csv"))).unwrap();
        assert_eq!(labels.len(), 100);
    }

    let out = dir.path().join("sweep");
    let mut args = vec!["sweep", "--config", s(&conf), "--out", s(&out), "--sweep.budgets", "0.5,1"];
    args.extend_from_slice(FAST);
    ok(&args);
    let curve = fs::read_to_string(out.join("curve.csv")).unwrap();
    let rows: Vec<&str> = curve.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("budget_fraction,budget_hours,utterances,baseline_uw_f1,semisup_uw_f1"));
    assert!(rows[1].starts_with("0.5,") && rows[2].starts_with("1,"));
    let summary = fs::read_to_string(out.join("crossover.csv")).unwrap();
    assert!(summary.starts_with("full_baseline_uw_f1,"));

    let bad = semisent(&["sweep", "--config", s(&conf), "--out", s(&dir.path().join("bad")), "--sweep.budgets", "0.5,0.2"]);
    assert_eq!(bad.status.code(), Some(1));
}
