use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "n_clients": 6,
  "n_malicious": 2,
  "rounds": 2,
  "data.synthetic_rows": 1200,
  "model.local_epochs": 1
}"#;

fn fedshield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedshield")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn config_problems_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&fedshield(&["run", "--config", missing.to_str().unwrap()])), 1);

    let unknown = write_config(dir.path(), r#"{"rounds": 2, "bogus": 1}"#);
    let out = fedshield(&["run", "--config", &unknown]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));

    let cfg = write_config(dir.path(), SMALL);
    assert_eq!(code(&fedshield(&["run", "--config", &cfg, "--n-malicious", "3"])), 1);
    assert_eq!(code(&fedshield(&["run", "--config", &cfg, "--rule", "median"])), 1);
    assert_eq!(code(&fedshield(&["run", "--config", &cfg, "--ibi", "maybe"])), 1);
    assert_eq!(code(&fedshield(&["run"])), 1);
    assert_eq!(code(&fedshield(&["--help"])), 0);
}

#[test]
fn unreadable_dataset_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"n_clients": 4, "n_malicious": 1, "data.path": "/nonexistent/brfss.csv"}"#);
    assert_eq!(code(&fedshield(&["run", "--config", &cfg])), 2);
}

#[test]
fn run_writes_csv_svg_and_a_replayable_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("first");
    let out = fedshield(&[
        "run", "--config", &cfg, "--rule", "trimmed_mean", "--ibi", "off", "--seed", "9", "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), fedshield::report::CSV_HEADER.join(","));
    let rows: Vec<&str> = lines.clone().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("0,"));
    assert!(csv.contains("# label: trimmed_mean no-ibi"));

    let svg = fs::read_to_string(out_dir.join("accuracy.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 1);

    // The echoed config carries the overrides, so replaying it needs no flags.
    let echo = fs::read_to_string(out_dir.join("config.json")).unwrap();
    let echoed: serde_json::Value = serde_json::from_str(&echo).unwrap();
    assert_eq!(echoed["rule"], "trimmed_mean");
    assert_eq!(echoed["ibi"], false);
    assert_eq!(echoed["seed"], 9);
    let replay_dir = dir.path().join("replay");
    let out = fedshield(&[
        "run",
        "--config",
        out_dir.join("config.json").to_str().unwrap(),
        "--out-dir",
        replay_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(out_dir.join("metrics.csv")).unwrap(), fs::read(replay_dir.join("metrics.csv")).unwrap());
}

#[test]
fn plot_overlays_curves() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "round,accuracy\n0,0.5\n1,0.6\n2,0.7\n# label: krum & co\n").unwrap();
    fs::write(&b, "round,accuracy,active\n0,0.5,20\n1,0.55,20\n").unwrap();
    let svg_path = dir.path().join("plot.svg");
    let out = fedshield(&["plot", a.to_str().unwrap(), b.to_str().unwrap(), "--out", svg_path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let svg = fs::read_to_string(&svg_path).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 2);
    let legend: Vec<&str> = doc.descendants().filter(|n| n.has_tag_name("text")).filter_map(|n| n.text()).collect();
    assert!(legend.contains(&"krum & co"));
    assert!(legend.contains(&"b"));

    fs::write(&b, "round,accuracy\n0,zero\n").unwrap();
    assert_eq!(code(&fedshield(&["plot", b.to_str().unwrap(), "--out", svg_path.to_str().unwrap()])), 1);
}

#[test]
fn synth_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synth.csv");
    assert_eq!(code(&fedshield(&["synth", "--rows", "50", "--out", path.to_str().unwrap()])), 0);
    let data = fedshield::data::load_csv(&path).unwrap();
    assert_eq!((data.n_rows(), data.n_cols()), (50, 21));
}
