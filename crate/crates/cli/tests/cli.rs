use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn orchsim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orchsim"))
        .args(args)
        .current_dir(dir)
        .env("ORCHSIM_LOG", "error")
        .output()
        .unwrap()
}

const SMALL: &str = "seed = 3\niterations = 2\nglobal_batch = 64\n\n[topology]\nd = 8\nc = 4\nintra_bw = 100.0\ninter_bw = 10.0\n\n[workload.generate]\nexamples = 128\n";

fn small_config(dir: &Path) -> String {
    fs::write(dir.join("small.toml"), SMALL).unwrap();
    "small.toml".into()
}

#[test]
fn generate_writes_one_line_per_example() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = orchsim(
        &[
            "generate",
            "--config",
            &cfg,
            "--examples",
            "50",
            "--trace",
            "t/x.jsonl",
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(tmp.path().join("t/x.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 50);
}

#[test]
fn bad_weights_exit_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL}weights = [0.5, 0.2, 0.2]\n");
    fs::write(tmp.path().join("bad.toml"), cfg).unwrap();
    let out = orchsim(&["generate", "--config", "bad.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sum to 1"));
}

#[test]
fn unknown_key_and_missing_file() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("typo.toml"), "iteratons = 3\n").unwrap();
    assert_eq!(
        orchsim(&["simulate", "--config", "typo.toml"], tmp.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        orchsim(&["simulate", "--config", "nope.toml"], tmp.path())
            .status
            .code(),
        Some(4)
    );
    assert_eq!(
        orchsim(&["simulate", "--trace", "nope.jsonl"], tmp.path())
            .status
            .code(),
        Some(4)
    );
    assert_eq!(
        orchsim(&["simulate", "--iterations", "x"], tmp.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn malformed_trace_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    fs::write(tmp.path().join("t.jsonl"), "{\"example_id\": 0}\n").unwrap();
    let out = orchsim(
        &["simulate", "--config", &cfg, "--trace", "t.jsonl"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn simulate_writes_reports_and_honours_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = orchsim(
        &[
            "simulate",
            "--config",
            &cfg,
            "--no-balance",
            "--iterations",
            "1",
            "--out",
            "r",
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("r/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["config"]["iterations"], 1);
    assert_eq!(report["config"]["baselines"]["no_balance"], true);
    let phases = report["iterations"][0]["per_phase"].as_array().unwrap();
    assert_eq!(phases.len(), 3);
    for p in phases {
        assert_eq!(p["pre"], p["post"]);
    }
    let csv = fs::read_to_string(tmp.path().join("r/summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
    assert!(csv.starts_with("iteration,phase,modality,policy"));
}

#[test]
fn same_seed_same_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    for dir in ["a", "b"] {
        assert!(orchsim(
            &["simulate", "--config", &cfg, "--seed", "5", "--out", dir],
            tmp.path()
        )
        .status
        .success());
        assert!(orchsim(
            &["generate", "--config", &cfg, "--seed", "5", "--out", dir],
            tmp.path()
        )
        .status
        .success());
    }
    for f in ["report.json", "summary.csv", "trace.jsonl"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(orchsim(
        &["generate", "--config", &cfg, "--seed", "6", "--out", "c"],
        tmp.path()
    )
    .status
    .success());
    assert_ne!(
        fs::read(tmp.path().join("a/trace.jsonl")).unwrap(),
        fs::read(tmp.path().join("c/trace.jsonl")).unwrap()
    );
}

#[test]
fn verify_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = orchsim(&["verify", "--cap", "50"], tmp.path());
    assert!(ok.status.success());
    assert!(String::from_utf8_lossy(&ok.stdout).contains("greedy_approximation"));

    let vacuous = orchsim(&["verify", "--cap", "0"], tmp.path());
    assert!(vacuous.status.success());
    assert!(String::from_utf8_lossy(&vacuous.stderr).contains("vacuous"));

    let bad = orchsim(
        &[
            "verify",
            "--cap",
            "50",
            "--inject-fault",
            "reversed-comparator",
        ],
        tmp.path(),
    );
    assert_eq!(bad.status.code(), Some(3));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(
        err.contains("greedy_approximation") && err.contains("lengths="),
        "{err}"
    );
}

#[test]
fn skipped_composition_fails_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = orchsim(
        &[
            "simulate",
            "--config",
            &cfg,
            "--inject-fault",
            "skip-composition",
        ],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("assembly"));
}

#[test]
fn hidden_flag_stays_out_of_help() {
    let tmp = tempfile::tempdir().unwrap();
    let help = orchsim(&["simulate", "--help"], tmp.path());
    let text = String::from_utf8_lossy(&help.stdout);
    assert!(text.contains("--disable-nodewise"));
    assert!(!text.contains("inject"));
}
