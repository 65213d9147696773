use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairmask"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, seed: u64) -> (PathBuf, PathBuf) {
    let csv = dir.join("syn.csv");
    let out = run(&["synth", "--out", s(&csv), "--n", &n.to_string(), "--seed", &seed.to_string()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    (csv.clone(), csv.with_extension("toml"))
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr).to_string();
    assert_eq!(text.trim_end().lines().count(), 1, "single-line error: {text}");
    text.trim_end().to_string()
}

#[test]
fn toy_flag_writes_fixture_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("toy.csv");
    assert!(run(&["synth", "--toy", "--out", s(&csv)]).status.success());
    let expected = "id,admission,sensitive,sat,extracurricular\n\
                    1,1,1,1600,4\n2,1,1,1500,6\n3,1,1,1500,4\n4,0,1,1400,6\n\
                    5,1,0,1400,6\n6,1,0,1300,5\n7,0,0,1200,4\n8,0,0,1200,4\n";
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), expected);
    let schema = std::fs::read_to_string(csv.with_extension("toml")).unwrap();
    assert!(schema.contains("label_column = \"admission\""));
}

#[test]
fn synth_is_byte_identical_for_same_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ca, _) = synth(a.path(), 300, 11);
    let (cb, _) = synth(b.path(), 300, 11);
    assert_eq!(std::fs::read(ca).unwrap(), std::fs::read(cb).unwrap());
}

#[test]
fn rho_out_of_range_names_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("x.csv");
    let out = run(&["synth", "--out", s(&csv), "--rho", "1.5"]);
    assert!(!out.status.success());
    let line = stderr_line(&out);
    assert!(line.starts_with("error[args]:"), "{line}");
    assert!(line.contains("--rho"));
    assert!(!csv.exists());
}

#[test]
fn compare_writes_reports_with_stable_keys() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, schema) = synth(dir.path(), 1500, 2);
    let out_dir = dir.path().join("report");
    let out = run(&["compare", "--data", s(&csv), "--schema", s(&schema), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().next().unwrap().contains("repeats=1"));
    assert_eq!(std::fs::read_to_string(out_dir.join("report.txt")).unwrap(), stdout);

    let doc: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    let keys: BTreeSet<&str> = doc.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, BTreeSet::from(["algorithms", "config", "metrics", "repeats"]));
    assert_eq!(doc["repeats"], 1);
    let algos: Vec<&str> = doc["algorithms"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(algos, ["unconstrained", "omit-sensitive", "majority", "massage", "train-then-mask"]);

    let m = &doc["metrics"];
    assert_eq!(m["train-then-mask"]["latent_discr"].as_f64(), Some(0.0));
    assert_eq!(m["train-then-mask"]["strict_latent_discr"].as_f64(), Some(0.0));
    assert_eq!(m["majority"]["admit_protected"], m["majority"]["admit_unprotected"]);
    assert_eq!(m["majority"]["group_discr"].as_f64(), Some(0.0));
    // config is enough to rerun
    for k in ["family", "seed", "split", "learning_rate", "epochs", "l2_penalty", "seeds"] {
        assert!(!doc["config"][k].is_null(), "config.{k}");
    }
}

#[test]
fn compare_averages_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, schema) = synth(dir.path(), 600, 4);
    let out_dir = dir.path().join("r");
    let out = run(&[
        "compare", "--data", s(&csv), "--schema", s(&schema), "--out", s(&out_dir),
        "--repeats", "3", "--family", "svm", "--seed", "7",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(doc["repeats"], 3);
    assert_eq!(doc["config"]["seeds"], serde_json::json!([7, 8, 9]));
    assert_eq!(doc["metrics"]["train-then-mask"]["latent_discr"].as_f64(), Some(0.0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("repeats=3"));
}

#[test]
fn compare_skips_massage_with_two_sensitive_columns() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("a,b,x,z,y\n");
    for i in 0..240u32 {
        let a = i % 2;
        let b = (i / 2) % 2;
        let x = f64::from((i * 37) % 101) / 10.0;
        let z = f64::from((i * 13) % 29);
        let y = u32::from(x + 2.0 * f64::from(a) > 5.5);
        csv.push_str(&format!("{a},{b},{x},{z},{y}\n"));
    }
    let data = dir.path().join("two.csv");
    std::fs::write(&data, csv).unwrap();
    let schema = dir.path().join("two.toml");
    std::fs::write(
        &schema,
        r#"label_column = "y"
positive_label = "1"

[[columns]]
name = "a"
kind = "categorical"

[[columns]]
name = "b"
kind = "categorical"

[[columns]]
name = "x"
kind = "numeric"

[[columns]]
name = "z"
kind = "numeric"

[[columns]]
name = "y"
kind = "categorical"

[[sensitive_columns]]
name = "a"
mask_reference = "0"

[[sensitive_columns]]
name = "b"
mask_reference = "0"
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("r");
    let out = run(&["compare", "--data", s(&data), "--schema", s(&schema), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("massage skipped"));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert!(doc["metrics"].get("massage").is_none());
    assert_eq!(doc["metrics"]["train-then-mask"]["latent_discr"].as_f64(), Some(0.0));
}

#[test]
fn sweep_exports_grid_and_marker() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, schema) = synth(dir.path(), 1000, 5);
    let out_file = dir.path().join("sweep.csv");
    let out = run(&["sweep", "--data", s(&csv), "--schema", s(&schema), "--out", s(&out_file)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_file).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "row,tau,accuracy,group_discr,on_frontier");
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows.len(), 102);
    let grid: Vec<(f64, f64, bool)> = rows[..101]
        .iter()
        .map(|r| {
            assert_eq!(r[0], "grid");
            (r[2].parse().unwrap(), r[3].parse().unwrap(), r[4] == "true")
        })
        .collect();
    assert_eq!(rows[101][0], "tau_star");
    let star_acc: f64 = rows[101][2].parse().unwrap();
    let max_acc = grid.iter().map(|g| g.0).fold(f64::MIN, f64::max);
    assert_eq!(star_acc, max_acc);
    for (i, &(a, g, flag)) in grid.iter().enumerate() {
        let dominated = grid
            .iter()
            .enumerate()
            .any(|(j, &(b, h, _))| j != i && b >= a && h <= g && (b > a || h < g));
        assert_eq!(flag, !dominated, "row {i}");
    }
}

#[test]
fn consistency_rows_and_offset_shift() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, schema) = synth(dir.path(), 1000, 6);
    let read = |tau: &str, name: &str| -> Vec<(f64, f64)> {
        let path = dir.path().join(name);
        let out = run(&[
            "consistency", "--data", s(&csv), "--schema", s(&schema), "--out", s(&path), "--tau", tau,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "own_score,knn_mean");
        text.lines()
            .skip(1)
            .map(|l| {
                let (a, b) = l.split_once(',').unwrap();
                (a.parse().unwrap(), b.parse().unwrap())
            })
            .collect()
    };
    let base = read("0", "c0.csv");
    let shifted = read("0.3", "c3.csv");
    assert_eq!(base.len(), 200);
    for (p, q) in base.iter().zip(&shifted) {
        assert!((q.0 - p.0 - 0.3).abs() < 1e-12);
        assert!((q.1 - p.1 - 0.3).abs() < 1e-12);
    }
}

#[test]
fn missing_data_fails_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (_, schema) = synth(dir.path(), 100, 1);
    let out_dir = dir.path().join("r");
    let out = run(&[
        "compare", "--data", s(&dir.path().join("absent.csv")), "--schema", s(&schema), "--out", s(&out_dir),
    ]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).starts_with("error[data]:"));
    assert!(!out_dir.join("report.json").exists());
    assert!(!out_dir.join("report.txt").exists());
}

#[test]
fn bad_split_is_an_argument_error() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, schema) = synth(dir.path(), 100, 1);
    let out = run(&[
        "compare", "--data", s(&csv), "--schema", s(&schema), "--out", s(dir.path()), "--split", "0.5,0.5",
    ]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).starts_with("error[args]:"));
    let out = run(&[
        "compare", "--data", s(&csv), "--schema", s(&schema), "--out", s(dir.path()), "--split", "0.5,0.4,0.4",
    ]);
    assert!(stderr_line(&out).starts_with("error[split]:"));
}

#[test]
fn unknown_flag_is_a_single_line_error() {
    let out = run(&["compare", "--bogus"]);
    assert!(!out.status.success());
    assert!(stderr_line(&out).starts_with("error[args]:"));
}
