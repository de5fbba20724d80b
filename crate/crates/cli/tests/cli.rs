//! End-to-end tests of the `ngnsim` binary: output shapes, exit codes,
//! override handling, and byte-level determinism of the command line.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ngnsim"))
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
        .display()
        .to_string()
}

fn temp_path(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("ngnsim-cli-test-{}-{name}", std::process::id()))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is utf-8")
}

fn stderr_str(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is utf-8")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_str(&stdout_str(out)).expect("stdout is json")
}

#[test]
fn trace_emits_one_json_line_per_message() {
    let ngn = run(&["trace", "--flow", "attach", "--variant", "ngn"]);
    assert_eq!(code(&ngn), 0, "stderr: {}", stderr_str(&ngn));
    let lines: Vec<String> = stdout_str(&ngn).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 9);
    for line in &lines {
        let msg: serde_json::Value = serde_json::from_str(line).expect("trace line is json");
        assert!(msg.get("seq").is_some() && msg.get("kind").is_some());
    }
    let engn = run(&["trace", "--flow", "attach", "--variant", "engn"]);
    assert_eq!(code(&engn), 0);
    assert_eq!(stdout_str(&engn).lines().count(), 14);
}

#[test]
fn mobility_flows_are_rejected_on_ngn() {
    let out = run(&["trace", "--flow", "mobility-register", "--variant", "ngn"]);
    assert_eq!(code(&out), 1);
    assert!(stderr_str(&out).contains("does not exist in the ngn architecture"));
}

#[test]
fn fault_fixtures_exit_with_the_violation_code() {
    let out = run(&[
        "trace",
        "--flow",
        "attach",
        "--config",
        &fixture("fault-engn-tcf-tf.json"),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr_str(&out).contains("ENGN-2"));
    // The faulted trace itself is still emitted in full.
    assert_eq!(stdout_str(&out).lines().count(), 15);
}

#[test]
fn usage_errors_exit_1() {
    let cases: &[&[&str]] = &[
        &["trace", "--flow", "bogus"],
        &[
            "analyze",
            "--engine",
            "bogus",
            "--config",
            &fixture("repairman.json"),
        ],
        &["sweep", "--grid", "5"],
        &["sweep", "--grid", "0:5"],
        &["sweep", "--grid", "9:3"],
        &["simulate", "--variant", "nonsense"],
        &["simulate", "--set", "garbage"],
        &[],
    ];
    for args in cases {
        let out = run(args);
        assert_eq!(code(&out), 1, "args {args:?}, stderr: {}", stderr_str(&out));
    }
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn missing_config_file_is_an_io_error() {
    let out = run(&["analyze", "--config", "/nonexistent/ngnsim.json"]);
    assert_eq!(code(&out), 4);
}

#[test]
fn malformed_config_is_a_usage_error() {
    let path = temp_path("broken.json");
    std::fs::write(&path, "{ this is not json").unwrap();
    let out = run(&["analyze", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    std::fs::remove_file(&path).ok();
}

#[test]
fn state_cap_exhaustion_exits_3() {
    let out = run(&[
        "analyze",
        "--config",
        &fixture("crossval-ngn.json"),
        "--population",
        "60",
        "--state-cap",
        "10",
    ]);
    assert_eq!(code(&out), 3);
    assert!(stderr_str(&out).contains("state space"));
}

#[test]
fn exact_engine_reproduces_the_machine_repair_results() {
    let out = run(&["analyze", "--config", &fixture("repairman.json")]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
    let report = json(&out);
    let x = report["throughput"].as_f64().unwrap();
    let t = report["meanResponse"].as_f64().unwrap();
    let util = report["utilization"]["transportControl"].as_f64().unwrap();
    assert!((x - 7.5 / 4.75).abs() < 1e-9);
    assert!((t - 0.9).abs() < 1e-9);
    assert!((util - 3.75 / 4.75).abs() < 1e-9);
}

#[test]
fn simulation_report_is_consistent_with_littles_law() {
    let out = run(&[
        "simulate",
        "--config",
        &fixture("repairman.json"),
        "--completions",
        "4000",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
    let report = json(&out);
    assert_eq!(report["engine"], "des");
    assert!(report["littlesResidual"].as_f64().unwrap() < 0.05);
    assert!((report["throughput"].as_f64().unwrap() - 7.5 / 4.75).abs() < 0.1);
}

#[test]
fn repeated_cli_runs_are_byte_identical() {
    let args = ["simulate", "--variant", "engn", "--completions", "2000"];
    let first = run(&args);
    let second = run(&args);
    assert_eq!(code(&first), 0);
    assert_eq!(first.stdout, second.stdout);
    let reseeded = run(&[
        "simulate",
        "--variant",
        "engn",
        "--completions",
        "2000",
        "--seed",
        "1",
    ]);
    assert_ne!(first.stdout, reseeded.stdout);
}

#[test]
fn sweep_prints_a_csv_row_per_grid_point() {
    let out = run(&[
        "sweep",
        "--config",
        &fixture("crossval-ngn.json"),
        "--grid",
        "2:6:2",
        "--engine",
        "ctmc",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
    let stdout = stdout_str(&out);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("variant,config,population,throughput,meanResponse,ciThroughput"));
    assert!(lines[1].starts_with("ngn,crossval-ngn,2,"));
    assert!(stderr_str(&out).contains("saturation"));
}

#[test]
fn dump_model_writes_the_generated_chain() {
    let path = temp_path("chain.json");
    let out = run(&[
        "analyze",
        "--config",
        &fixture("repairman.json"),
        "--dump-model",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
    let chain: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(chain["population"], 3);
    assert_eq!(chain["stations"].as_array().unwrap().len(), 2);
    assert_eq!(chain["states"].as_array().unwrap().len(), 4);
    assert!(!chain["transitions"].as_array().unwrap().is_empty());
    std::fs::remove_file(&path).ok();
}

#[test]
fn set_overrides_reach_the_engine() {
    let base = run(&["analyze", "--config", &fixture("repairman.json")]);
    let faster = run(&[
        "analyze",
        "--config",
        &fixture("repairman.json"),
        "--set",
        "rates.controlSignaling=4.0",
    ]);
    assert_eq!(code(&faster), 0, "stderr: {}", stderr_str(&faster));
    let x_base = json(&base)["throughput"].as_f64().unwrap();
    let x_fast = json(&faster)["throughput"].as_f64().unwrap();
    assert!(x_fast > x_base);

    let repopulated = run(&[
        "analyze",
        "--config",
        &fixture("repairman.json"),
        "--set",
        "population=1",
    ]);
    assert_eq!(json(&repopulated)["population"], 1);
}

#[test]
fn event_log_is_written_as_jsonl() {
    let path = temp_path("events.jsonl");
    let out = run(&[
        "simulate",
        "--config",
        &fixture("repairman.json"),
        "--completions",
        "300",
        "--events-out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().count() > 300);
    for line in text.lines().take(50) {
        let event: serde_json::Value = serde_json::from_str(line).expect("event line is json");
        assert!(event.get("event").is_some() && event.get("time").is_some());
    }
    std::fs::remove_file(&path).ok();
}

#[test]
fn compare_reports_the_capacity_gain_per_variant() {
    let out = run(&[
        "compare",
        "--config-ngn",
        &fixture("crossval-ngn.json"),
        "--config-engn",
        &fixture("crossval-engn.json"),
        "--grid",
        "1:3:1",
        "--engine",
        "ctmc",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr_str(&out));
    let report = json(&out);
    assert!((report["ngn"]["psi"].as_f64().unwrap() - 1.5).abs() < 1e-12);
    assert!((report["engn"]["psi"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(
        report["ngn"]["outcomes"][0]["pools"]["transportFunction"],
        4
    );
    assert_eq!(
        report["engn"]["outcomes"][0]["pools"]["transportFunction"],
        2
    );
}

#[test]
fn out_files_are_written_without_leftover_temporaries() {
    let path = temp_path("trace.jsonl");
    let out = run(&[
        "trace",
        "--flow",
        "attach",
        "--variant",
        "engn",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 14);
    let mut tmp_name = path.file_name().unwrap().to_os_string();
    tmp_name.push(".tmp");
    assert!(!path.with_file_name(tmp_name).exists());
    std::fs::remove_file(&path).ok();
}
