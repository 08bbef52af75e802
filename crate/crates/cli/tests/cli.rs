use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_influence-audit"));
    cmd.env_remove("INFLUENCE_AUDIT_THREADS");
    cmd
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&read(path)).unwrap()
}

/// Small benchmark dataset shared by most tests.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "generate",
            "--n",
            "400",
            "--dim",
            "4",
            "--seed",
            "3",
            "--out-dir",
            "data",
        ],
    );
    dir
}

fn command_lines(out: &str) -> Vec<Vec<String>> {
    let s = |v: &[&str]| v.iter().map(|x| x.replace("OUT", out)).collect::<Vec<_>>();
    vec![
        s(&[
            "train",
            "--train",
            "data/train.csv",
            "--out",
            "OUT/train.json",
        ]),
        s(&[
            "audit",
            "--data",
            "data/test.csv",
            "--train",
            "data/train.csv",
            "--group",
            "1",
            "--scores-out",
            "OUT/scores.csv",
            "--out",
            "OUT/audit.json",
        ]),
        s(&[
            "sensitivity",
            "--mode",
            "test",
            "--metric",
            "ece",
            "--fractions",
            "0,0.1,0.3",
            "--seeds",
            "3",
            "--train",
            "data/train.csv",
            "--test",
            "data/test.csv",
            "--out",
            "OUT/sens_test.json",
        ]),
        s(&[
            "sensitivity",
            "--mode",
            "train",
            "--fractions",
            "0,0.2",
            "--seeds",
            "2",
            "--train",
            "data/train.csv",
            "--test",
            "data/test.csv",
            "--out",
            "OUT/sens_train.json",
        ]),
        s(&[
            "rank",
            "--method",
            "if-disparity-label",
            "--train",
            "data/train.csv",
            "--audit",
            "data/val.csv",
            "--group",
            "1",
            "--flip-fraction",
            "0.2",
            "--flip-seed",
            "5",
            "--k",
            "10,50",
            "--out",
            "OUT/rank.json",
        ]),
        s(&[
            "rank",
            "--method",
            "cv-5",
            "--train",
            "data/train.csv",
            "--audit",
            "data/val.csv",
            "--flip-fraction",
            "0.2",
            "--out",
            "OUT/rank_cv.json",
        ]),
        s(&[
            "relabel",
            "--train",
            "data/train.csv",
            "--audit",
            "data/val.csv",
            "--group",
            "1",
            "--flip-fraction",
            "0.2",
            "--out",
            "OUT/relabel.json",
        ]),
        s(&[
            "oracle-check",
            "--n",
            "40",
            "--dim",
            "3",
            "--out",
            "OUT/oracle.json",
        ]),
    ]
}

fn outputs(dir: &Path, out: &str) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir.join(out))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                read(&p),
            )
        })
        .collect()
}

#[test]
fn every_command_is_byte_identical_across_reruns_and_thread_counts() {
    let dir = workspace();
    for (out, threads) in [("run1", "1"), ("run2", "1"), ("run3", "4")] {
        std::fs::create_dir(dir.path().join(out)).unwrap();
        for line in command_lines(out) {
            let mut args = vec!["--threads", threads];
            args.extend(line.iter().map(String::as_str));
            ok(dir.path(), &args);
        }
    }
    let a = outputs(dir.path(), "run1");
    assert_eq!(a.len(), 11);
    for other in ["run2", "run3"] {
        let b = outputs(dir.path(), other);
        for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(&b) {
            assert_eq!(name_a, name_b);
            // reports embed their own output paths, which differ by directory
            let normalize = |bytes: &[u8], d: &str| {
                String::from_utf8_lossy(bytes).replace(&format!("{d}/"), "OUT/")
            };
            assert_eq!(
                normalize(bytes_a, "run1"),
                normalize(bytes_b, other),
                "{name_a} differs in run {other}"
            );
        }
    }
}

#[test]
fn threads_env_var_is_a_fallback() {
    let dir = workspace();
    let out = bin()
        .current_dir(dir.path())
        .env("INFLUENCE_AUDIT_THREADS", "0")
        .args(["train", "--train", "data/train.csv", "--out", "m.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reports_replay_from_their_embedded_config() {
    let dir = workspace();
    std::fs::create_dir(dir.path().join("out")).unwrap();
    for line in command_lines("out") {
        let args: Vec<&str> = line.iter().map(String::as_str).collect();
        ok(dir.path(), &args);
        let report = args[args.iter().position(|a| *a == "--out").unwrap() + 1];
        let saved = dir.path().join("saved.json");
        std::fs::copy(dir.path().join(report), &saved).unwrap();
        std::fs::remove_file(dir.path().join(report)).unwrap();
        ok(
            dir.path(),
            &["--threads", "1", "--config", "saved.json", args[0]],
        );
        assert_eq!(read(dir.path().join(report)), read(&saved), "{}", args[0]);
    }
}

#[test]
fn generate_is_deterministic_and_reports_minority_fraction() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["one", "two"] {
        ok(
            dir.path(),
            &[
                "generate",
                "--n",
                "2000",
                "--dim",
                "8",
                "--epsilon",
                "0.15",
                "--seed",
                "7",
                "--out-dir",
                out,
            ],
        );
    }
    for file in ["train.csv", "val.csv", "test.csv"] {
        assert_eq!(
            read(dir.path().join("one").join(file)),
            read(dir.path().join("two").join(file))
        );
    }
    let manifest = json(dir.path().join("one/manifest.json"));
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["config"]["seed"], 7);
    assert_eq!(manifest["config"]["epsilon"], 0.15);
    let fraction = manifest["result"]["minority_fraction"].as_f64().unwrap();
    assert!((fraction - 0.30).abs() <= 2.0 / (2000f64).sqrt());
    let sizes: Vec<u64> = ["train", "val", "test"]
        .iter()
        .map(|s| manifest["result"]["splits"][s]["size"].as_u64().unwrap())
        .collect();
    assert_eq!(sizes, vec![1120, 280, 600]);
}

#[test]
fn invalid_epsilon_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["generate", "--epsilon", "0.6", "--out-dir", "data"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("data").exists());
}

#[test]
fn sensitivity_report_shape() {
    let dir = workspace();
    ok(
        dir.path(),
        &["train", "--train", "data/train.csv", "--out", "model.json"],
    );
    ok(
        dir.path(),
        &[
            "sensitivity",
            "--mode",
            "test",
            "--metric",
            "ece",
            "--fractions",
            "0,0.1,0.3",
            "--seeds",
            "5",
            "--test",
            "data/test.csv",
            "--model",
            "model.json",
            "--out",
            "sens.json",
        ],
    );
    let report = json(dir.path().join("sens.json"));
    let result = &report["result"];
    assert_eq!(result["grid"].as_array().unwrap().len(), 3);
    assert_eq!(result["seeds"].as_array().unwrap().len(), 5);
    let cells = result["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 15);
    for cell in cells {
        assert_eq!(cell["values"].as_object().unwrap().len(), 2);
        if cell["fraction"] == 0.0 {
            assert!(cell["percent_change"]
                .as_object()
                .unwrap()
                .values()
                .all(|v| v == 0.0));
        }
    }
    let csv = String::from_utf8(read(dir.path().join("sens.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 1 + 15 * 2);
}

#[test]
fn oracle_check_prints_rank_correlations() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["oracle-check", "--n", "60", "--dim", "4"]);
    let line = stdout
        .lines()
        .find(|l| l.contains("influence_up_disparity"))
        .unwrap();
    let rho: f64 = line.rsplit('=').next().unwrap().trim().parse().unwrap();
    assert!(rho >= 0.95, "{stdout}");

    let strict = run(
        dir.path(),
        &[
            "oracle-check",
            "--n",
            "60",
            "--dim",
            "4",
            "--min-spearman",
            "1.01",
        ],
    );
    assert_eq!(strict.status.code(), Some(1));
}

#[test]
fn exit_codes_are_distinct() {
    let dir = workspace();
    let code = |args: &[&str]| run(dir.path(), args).status.code();
    assert_eq!(
        code(&[
            "rank",
            "--method",
            "oracle",
            "--train",
            "data/train.csv",
            "--audit",
            "data/val.csv",
            "--out",
            "r.json"
        ]),
        Some(2)
    );
    assert_eq!(code(&["train", "--out", "m.json"]), Some(2));
    assert_eq!(
        code(&["train", "--train", "data/missing.csv", "--out", "m.json"]),
        Some(3)
    );
    assert_eq!(
        code(&[
            "train",
            "--train",
            "data/train.csv",
            "--out",
            "m.json",
            "--max-iterations",
            "1"
        ]),
        Some(4)
    );

    std::fs::write(dir.path().join("bad.csv"), "x0,label,group\n0.5,2,0\n").unwrap();
    assert_eq!(
        code(&["train", "--train", "bad.csv", "--out", "m.json"]),
        Some(3)
    );

    // group 1 has no negatives, so its false-positive rate is undefined
    std::fs::write(
        dir.path().join("pos.csv"),
        "x0,label,group\n1.0,1,1\n-1.0,0,0\n0.5,1,1\n-0.5,0,0\n",
    )
    .unwrap();
    ok(
        dir.path(),
        &[
            "train",
            "--train",
            "data/train.csv",
            "--out",
            "wide_model.json",
        ],
    );
    assert_eq!(
        code(&[
            "audit",
            "--data",
            "pos.csv",
            "--model",
            "wide_model.json",
            "--out",
            "a.json"
        ]),
        Some(3)
    );
    ok(
        dir.path(),
        &["train", "--train", "pos.csv", "--out", "pos_model.json"],
    );
    assert_eq!(
        code(&[
            "audit",
            "--data",
            "pos.csv",
            "--model",
            "pos_model.json",
            "--metric",
            "gfpr",
            "--group",
            "1",
            "--out",
            "a.json"
        ]),
        Some(5)
    );
}

#[test]
fn commands_do_not_modify_inputs() {
    let dir = workspace();
    let before: Vec<Vec<u8>> = ["train", "val", "test"]
        .iter()
        .map(|s| read(dir.path().join(format!("data/{s}.csv"))))
        .collect();
    std::fs::create_dir(dir.path().join("out")).unwrap();
    for line in command_lines("out") {
        let args: Vec<&str> = line.iter().map(String::as_str).collect();
        ok(dir.path(), &args);
    }
    let after: Vec<Vec<u8>> = ["train", "val", "test"]
        .iter()
        .map(|s| read(dir.path().join(format!("data/{s}.csv"))))
        .collect();
    assert_eq!(before, after);
    let clash = run(
        dir.path(),
        &[
            "train",
            "--train",
            "data/train.csv",
            "--out",
            "data/train.csv",
        ],
    );
    assert_eq!(clash.status.code(), Some(2));
    assert_eq!(read(dir.path().join("data/train.csv")), before[0]);
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = workspace();
    std::fs::write(
        dir.path().join("rank.json"),
        r#"{"train": "data/train.csv", "audit": "data/val.csv", "method": "loss", "flip_fraction": 0.1, "out": "r.json"}"#,
    )
    .unwrap();
    ok(
        dir.path(),
        &["--config", "rank.json", "rank", "--flip-fraction", "0.2"],
    );
    let report = json(dir.path().join("r.json"));
    assert_eq!(report["config"]["method"], "loss");
    assert_eq!(report["config"]["flip_fraction"], 0.2);
    assert_eq!(
        report["result"]["flips"]["flipped_indices"]
            .as_array()
            .unwrap()
            .len(),
        45
    );
}
