//! End-to-end tests over the compiled binaries: exit codes, determinism,
//! the full index/train/run/eval chain, and the stub server round trip.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

const ADAPTER_URL_VAR: &str = "DYNARAG_ADAPTER_URL";

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn cli() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dynarag"));
    cmd.env_remove(ADAPTER_URL_VAR);
    cmd
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn expect_success(output: &Output) -> String {
    assert!(
        output.status.success(),
        "command failed with {:?}\nstderr: {}",
        output.status.code(),
        stderr_of(output)
    );
    stdout_of(output)
}

fn path_arg(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Builds an index and both detector weight files under `dir`.
fn prepare_workspace(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let index = dir.join("index.txt");
    let early = dir.join("early.json");
    let realtime = dir.join("realtime.json");
    let out = cli()
        .args(["index", "--corpus", path_arg(&fixture("corpus_50.jsonl")), "--out"])
        .arg(&index)
        .output()
        .unwrap();
    expect_success(&out);
    let out = cli()
        .args([
            "train-early",
            "--qa",
            path_arg(&fixture("qa_small.jsonl")),
            "--adapter",
            &format!("mock:{}", path_arg(&fixture("scenario_train.json"))),
            "--hidden",
            "4",
            "--epochs",
            "50",
            "--out",
        ])
        .arg(&early)
        .output()
        .unwrap();
    expect_success(&out);
    let out = cli()
        .args([
            "train-realtime",
            "--corpus",
            path_arg(&fixture("corpus_train.jsonl")),
            "--adapter",
            &format!("mock:{}", path_arg(&fixture("scenario_train.json"))),
            "--hidden",
            "4",
            "--epochs",
            "50",
            "--out",
        ])
        .arg(&realtime)
        .output()
        .unwrap();
    expect_success(&out);
    (index, early, realtime)
}

fn run_args(
    index: &Path,
    early: &Path,
    realtime: &Path,
    traces: &Path,
    extra: &[&str],
) -> Vec<String> {
    let mut args = vec![
        "run".to_string(),
        "--dataset".into(),
        path_arg(&fixture("qa_small.jsonl")).into(),
        "--index".into(),
        path_arg(index).into(),
        "--early".into(),
        path_arg(early).into(),
        "--realtime".into(),
        path_arg(realtime).into(),
        "--adapter".into(),
        format!("mock:{}", path_arg(&fixture("scenario_run.json"))),
        "--out".into(),
        path_arg(traces).into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

fn read_traces(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|line| serde_json::from_str(line).unwrap())
        .collect()
}

#[test]
fn index_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.txt");
    let b = dir.path().join("b.txt");
    for out in [&a, &b] {
        let output = cli()
            .args(["index", "--corpus", path_arg(&fixture("corpus_50.jsonl")), "--out"])
            .arg(out)
            .output()
            .unwrap();
        let stdout = expect_success(&output);
        assert!(stdout.contains("indexed 50 documents"));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let output = cli().args(["run", "--bogus"]).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr_of(&output).contains("Usage"), "expected usage text");
}

#[test]
fn unknown_verb_is_a_usage_error() {
    let output = cli().arg("frobnicate").output().unwrap();
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let output = cli().arg("--help").output().unwrap();
    assert_eq!(output.status.code(), Some(0));
    assert!(stdout_of(&output).contains("Usage"));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = cli()
        .args(["index", "--corpus", "/no/such/corpus.jsonl", "--out"])
        .arg(dir.path().join("i.txt"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("/no/such/corpus.jsonl"), "error must name the path");
}

#[test]
fn missing_weights_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (index, _, _) = prepare_workspace(dir.path());
    let output = cli()
        .args([
            "run",
            "--dataset",
            path_arg(&fixture("qa_small.jsonl")),
            "--index",
            path_arg(&index),
            "--adapter",
            &format!("mock:{}", path_arg(&fixture("scenario_run.json"))),
            "--out",
        ])
        .arg(dir.path().join("t.jsonl"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr_of(&output).contains("--early"));
}

#[test]
fn bad_adapter_spec_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let output = cli()
        .args([
            "train-early",
            "--qa",
            path_arg(&fixture("qa_small.jsonl")),
            "--adapter",
            "ftp://nope",
            "--out",
        ])
        .arg(dir.path().join("w.json"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr_of(&output).contains("mock:FILE"));
}

#[test]
fn training_produces_loadable_weights() {
    let dir = tempfile::tempdir().unwrap();
    let (_, early, realtime) = prepare_workspace(dir.path());
    let rnn = dynarag::detectors::RnnNet::load(&early).unwrap();
    assert_eq!(rnn.input_dim, dynarag::detectors::EARLY_FEATURES);
    let mlp = dynarag::detectors::MlpNet::load(&realtime).unwrap();
    assert_eq!(mlp.input_dim, dynarag::detectors::REALTIME_FEATURES);
}

#[test]
fn run_is_deterministic_and_prints_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let (index, early, realtime) = prepare_workspace(dir.path());
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        let output =
            cli().args(run_args(&index, &early, &realtime, out, &[])).output().unwrap();
        let stdout = expect_success(&output);
        assert!(stdout.contains("config fingerprint: "), "run must print the fingerprint");
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert!(!bytes.is_empty());
}

#[test]
fn eval_prints_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let (index, early, realtime) = prepare_workspace(dir.path());
    let traces = dir.path().join("traces.jsonl");
    let output = cli().args(run_args(&index, &early, &realtime, &traces, &[])).output().unwrap();
    expect_success(&output);

    let output = cli()
        .args(["eval", "--traces", path_arg(&traces), "--dataset"])
        .arg(fixture("qa_small.jsonl"))
        .output()
        .unwrap();
    let stdout = expect_success(&output);
    let json_at = stdout.find("\n{").expect("a JSON report after the table");
    let (table, json) = stdout.split_at(json_at);
    for key in ["examples", "em", "f1", "precision", "recall", "config"] {
        assert!(table.contains(key), "table is missing {key}");
    }
    let report: Value = serde_json::from_str(json.trim()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 6);
}

#[test]
fn wo_rag_flags_yield_single_pass_traces() {
    let dir = tempfile::tempdir().unwrap();
    let (index, early, realtime) = prepare_workspace(dir.path());
    let traces_path = dir.path().join("worag.jsonl");
    let flags = ["--no-early", "--no-realtime", "--no-prerank", "--no-stepwise", "--no-chunk"];
    let output =
        cli().args(run_args(&index, &early, &realtime, &traces_path, &flags)).output().unwrap();
    expect_success(&output);

    let traces = read_traces(&traces_path);
    assert_eq!(traces.len(), 6);
    for trace in &traces {
        let question = trace["question"].as_str().unwrap();
        let events = trace["events"].as_array().unwrap();
        if question == "Where does the okapi live" || question == "What is the capital of Atlantis" {
            // Low-confidence scripts trip the static probability rule.
            assert!(
                events.iter().any(|e| e["kind"] == "realtime_trigger"),
                "{question}: static rule should flag a low-probability token"
            );
        } else {
            assert!(events.is_empty(), "{question}: expected a plain single pass");
            assert_eq!(trace["prompts"].as_array().unwrap().len(), 1);
            assert_eq!(trace["prompts"][0].as_str().unwrap(), question);
        }
    }
}

#[test]
fn config_file_shapes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (index, early, _) = prepare_workspace(dir.path());
    let config = dir.path().join("engine.toml");
    std::fs::write(&config, "max_tokens = 8\ndisable_realtime = true\n").unwrap();
    let traces = dir.path().join("traces.jsonl");
    let output = cli()
        .args([
            "run",
            "--dataset",
            path_arg(&fixture("qa_small.jsonl")),
            "--index",
            path_arg(&index),
            "--early",
            path_arg(&early),
            "--adapter",
            &format!("mock:{}", path_arg(&fixture("scenario_run.json"))),
            "--config",
            path_arg(&config),
            "--out",
        ])
        .arg(&traces)
        .output()
        .unwrap();
    let stdout = expect_success(&output);
    let fingerprint = stdout
        .lines()
        .find_map(|l| l.strip_prefix("config fingerprint: "))
        .expect("fingerprint line");
    assert_ne!(
        fingerprint,
        dynarag::EngineConfig::default().fingerprint(),
        "a custom config must change the fingerprint"
    );
    for trace in read_traces(&traces) {
        assert_eq!(trace["config_fingerprint"].as_str().unwrap(), fingerprint);
    }
}

#[test]
fn demo_runs_the_scripted_pipeline() {
    let output =
        cli().args(["demo", "--question", "Where does Santa Claus live"]).output().unwrap();
    let stdout = expect_success(&output);
    assert!(stdout.contains("config fingerprint: "));
    assert!(stdout.contains("answer: "));
    assert!(stdout.contains("RealtimeTrigger"));
}

struct StubProcess {
    child: Child,
    url: String,
}

impl StubProcess {
    fn start(scenario: &Path) -> StubProcess {
        let mut child = Command::new(env!("CARGO_BIN_EXE_dynarag-stub-server"))
            .args(["--scenario", path_arg(scenario), "--addr", "127.0.0.1:0"])
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
        let url = line
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected stub greeting: {line:?}"))
            .trim()
            .to_string();
        StubProcess { child, url }
    }
}

impl Drop for StubProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[test]
fn stub_server_round_trip_matches_mock() {
    let dir = tempfile::tempdir().unwrap();
    let (index, early, realtime) = prepare_workspace(dir.path());
    let via_mock = dir.path().join("mock.jsonl");
    let output =
        cli().args(run_args(&index, &early, &realtime, &via_mock, &[])).output().unwrap();
    expect_success(&output);

    let stub = StubProcess::start(&fixture("scenario_run.json"));
    let via_http = dir.path().join("http.jsonl");
    let mut args = run_args(&index, &early, &realtime, &via_http, &[]);
    let adapter_at = args.iter().position(|a| a == "--adapter").unwrap();
    args[adapter_at + 1] = stub.url.clone();
    let output = cli().args(args).output().unwrap();
    expect_success(&output);

    assert_eq!(std::fs::read(&via_mock).unwrap(), std::fs::read(&via_http).unwrap());
}

#[test]
fn env_var_overrides_the_adapter_argument() {
    let dir = tempfile::tempdir().unwrap();
    let (index, early, realtime) = prepare_workspace(dir.path());
    let stub = StubProcess::start(&fixture("scenario_run.json"));
    let traces = dir.path().join("traces.jsonl");
    let mut args = run_args(&index, &early, &realtime, &traces, &[]);
    let adapter_at = args.iter().position(|a| a == "--adapter").unwrap();
    args[adapter_at + 1] = "mock:/definitely/not/here.json".into();
    let output = cli().args(args).env(ADAPTER_URL_VAR, &stub.url).output().unwrap();
    expect_success(&output);
    assert_eq!(read_traces(&traces).len(), 6);
}
