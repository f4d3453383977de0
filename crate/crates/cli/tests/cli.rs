use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gdlnn"))
}

fn toy() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy.json")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const TOY: [&str; 4] = ["--format", "json", "--ratios", "1,0,0"];

fn toy_args<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let data = Box::leak(toy().display().to_string().into_boxed_str());
    let mut v = vec![cmd, "--data", data];
    v.extend_from_slice(&TOY);
    if cmd == "mine" || cmd == "train" {
        v.extend_from_slice(&["--topk", "2", "--epsilon", "1"]);
    }
    v.extend_from_slice(extra);
    v
}

#[test]
fn toy_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mine = run(dir.path(), &toy_args("mine", &[]));
    assert!(mine.status.success(), "{}", String::from_utf8_lossy(&mine.stderr));
    assert!(stdout(&mine).starts_with("program\tlabel\tscore"));
    assert!(dir.path().join("layer.gdl").exists());

    let train = run(dir.path(), &toy_args("train", &["--layer", "layer.gdl"]));
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    assert!(stdout(&train).contains("programs\t2"));

    let predict = run(dir.path(), &toy_args("predict", &["--model", "model.gdlnn"]));
    assert!(predict.status.success());
    assert_eq!(stdout(&predict).lines().count(), 5);

    let explain = run(dir.path(), &toy_args("explain", &["--model", "model.gdlnn", "--split", "all", "--samples", "100"]));
    assert!(explain.status.success(), "{}", String::from_utf8_lossy(&explain.stderr));
    let text = std::fs::read_to_string(dir.path().join("explanations/graph_0.txt")).unwrap();
    assert!(text.contains("digraph"));

    let eval = run(dir.path(), &toy_args("eval", &["--model", "model.gdlnn", "--split", "all", "--samples", "100"]));
    assert!(eval.status.success());
    let out = stdout(&eval);
    assert!(out.contains("contract_violations\t0"), "{out}");
    assert!(String::from_utf8_lossy(&eval.stderr).lines().all(|l| l.starts_with("level=")));
}

#[test]
fn exit_codes_separate_failure_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(dir.path(), &["mine", "--format", "json", "--data", "nope.json"]);
    assert_eq!(missing.status.code(), Some(3));
    let off_grid = run(dir.path(), &toy_args("mine", &["--epsilon", "0.5"]));
    assert_eq!(off_grid.status.code(), Some(2));
    let bad_flag = run(dir.path(), &["train", "--no-such-flag"]);
    assert_eq!(bad_flag.status.code(), Some(2));

    assert!(run(dir.path(), &toy_args("train", &[])).status.success());
    let budget = run(dir.path(), &toy_args("predict", &["--model", "model.gdlnn", "--budget", "1"]));
    assert_eq!(budget.status.code(), Some(4));
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--format", "ba2motifs", "--count", "40", "--topk", "4", "--epsilon", "0.1", "--override"];
    let mut outs = Vec::new();
    for jobs in ["1", "3"] {
        let model = format!("m{jobs}.gdlnn");
        let mut args = vec!["train", "--jobs", jobs, "--out", &model, "--epochs", "50"];
        args.extend_from_slice(&common);
        let train = run(dir.path(), &args);
        assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
        let mut args = vec!["eval", "--jobs", jobs, "--model", &model, "--samples", "100"];
        args.extend_from_slice(&common[..4]);
        let eval = run(dir.path(), &args);
        assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
        outs.push((stdout(&train), stdout(&eval), std::fs::read(dir.path().join(&model)).unwrap()));
    }
    assert_eq!(outs[0], outs[1]);
}
