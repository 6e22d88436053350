use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const FAST: &[&str] = &[
    "--search",
    "off",
    "--n-estimators",
    "6",
    "--random-forests",
    "1",
    "--completely-random-forests",
    "1",
];

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_daforest"));
    c.env_remove("DAF_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Three separable classes with an id column.
fn write_toy(dir: &Path) -> PathBuf {
    let mut text = String::from("id,a,b,c,label\n");
    for i in 0..90 {
        let class = ["red", "green", "blue"][i % 3];
        let shift = (i % 3) as f64 * 2.0;
        let a = shift + ((i * 7) % 10) as f64 * 0.1;
        let b = ((i * 13) % 10) as f64 * 0.1;
        let c = shift * 0.5 + ((i * 3) % 5) as f64 * 0.2;
        text.push_str(&format!("{i},{a},{b},{c},{class}\n"));
    }
    let path = dir.join("toy.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn train_then_predict() {
    let dir = TempDir::new().unwrap();
    let data = write_toy(dir.path());
    let model = dir.path().join("m.daf");
    let report = dir.path().join("r.json");
    let mut args = vec![
        "train", "--data", s(&data), "--label", "label", "--drop", "id", "--test-fraction", "0.3", "--seed", "7",
        "-o", s(&model), "--report", s(&report),
    ];
    args.extend_from_slice(FAST);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("test accuracy"));

    let r = read_json(&report);
    assert_eq!(r["data"]["n_classes"], 3);
    assert_eq!(r["seeds"]["model"], 7);
    assert_eq!(r["seeds"]["split"], 7);
    assert_eq!(r["config"]["seed"], 7);
    let layers = r["layers"].as_array().unwrap();
    assert_eq!(layers.len() as u64, r["trained_layers"].as_u64().unwrap());
    assert_eq!(std::fs::metadata(&model).unwrap().len(), r["model_bytes"].as_u64().unwrap());

    let preds = dir.path().join("p.csv");
    let out = run(&[
        "predict", "-m", s(&model), "--data", s(&data), "--label", "label", "--drop", "id", "--with-labels",
        "--proba", "-o", s(&preds),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&preds).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "row,prediction,p_red,p_green,p_blue");
    assert_eq!(lines.count(), 90);
    assert!(String::from_utf8_lossy(&out.stderr).contains("accuracy"));

    // Without labels the label column has to be dropped explicitly.
    let out = run(&["predict", "-m", s(&model), "--data", s(&data), "--drop", "id", "--drop", "label"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out), text.lines().map(|l| l.split(',').take(2).collect::<Vec<_>>().join(",") + "\n").collect::<String>());
}

#[test]
fn reduction_mode_and_forced_layers() {
    let dir = TempDir::new().unwrap();
    let data = write_toy(dir.path());
    let model = dir.path().join("m.daf");
    let report = dir.path().join("r.json");
    let base = ["train", "--data", s(&data), "--drop", "id", "-o", s(&model), "--report", s(&report)];

    let mut args = base.to_vec();
    args.extend_from_slice(&["--connectivity", "plain", "--no-boosting", "--max-layers", "1"]);
    args.extend_from_slice(FAST);
    assert_eq!(code(&run(&args)), 0);
    let r = read_json(&report);
    assert_eq!(r["kept_layers"], 1);
    assert_eq!(r["config"]["boosting"], false);
    assert_eq!(r["config"]["connectivity"], "plain");

    let mut args = base.to_vec();
    args.extend_from_slice(&["--force-layers", "6", "--test-fraction", "0.3"]);
    args.extend_from_slice(FAST);
    assert_eq!(code(&run(&args)), 0);
    let r = read_json(&report);
    let layers = r["layers"].as_array().unwrap();
    assert_eq!(layers.len(), 6);
    assert!(layers.iter().all(|l| l["kept"] == true && l["test_accuracy"].is_number()));
    let widths: Vec<u64> = layers.iter().map(|l| l["input_width"].as_u64().unwrap()).collect();
    assert_eq!(widths, vec![3, 9, 15, 21, 27, 33]);
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let data = write_toy(dir.path());
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "connectivity = \"sparse\"\nseed = 3\nk_folds = 4\nsearch = \"off\"\nn_estimators = 4\n").unwrap();
    let report = dir.path().join("r.json");
    let out = run(&[
        "train", "--data", s(&data), "--drop", "id", "--config", s(&cfg), "--seed", "9", "-o",
        s(&dir.path().join("m.daf")), "--report", s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&report);
    assert_eq!(r["config"]["seed"], 9);
    assert_eq!(r["config"]["k_folds"], 4);
    assert_eq!(r["config"]["connectivity"], "sparse");
    assert_eq!(r["n_estimators"]["random"], 4);
}

#[test]
fn thread_count_does_not_change_the_archive() {
    let dir = TempDir::new().unwrap();
    let data = write_toy(dir.path());
    let (a, b) = (dir.path().join("a.daf"), dir.path().join("b.daf"));
    let mut one = bin();
    one.env("DAF_THREADS", "1")
        .args(["train", "--data", s(&data), "--drop", "id", "-o", s(&a), "--search", "2:10:2"]);
    assert_eq!(code(&one.output().unwrap()), 0);
    let out = run(&["--threads", "3", "train", "--data", s(&data), "--drop", "id", "-o", s(&b), "--search", "2:10:2"]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn exit_codes_by_error_class() {
    let dir = TempDir::new().unwrap();
    let data = write_toy(dir.path());
    let model = dir.path().join("m.daf");

    assert_eq!(code(&run(&["train", "--bogus"])), 2);
    assert_eq!(code(&run(&["train", "--data", "/nonexistent.csv", "-o", s(&model)])), 3);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b\n1,x\nfoo,y\n").unwrap();
    assert_eq!(code(&run(&["train", "--data", s(&bad), "-o", s(&model)])), 4);

    let out = run(&["train", "--data", s(&data), "-o", s(&model), "--connectivity", "ring"]);
    assert_eq!(code(&out), 5);
    assert!(String::from_utf8_lossy(&out.stderr).contains("connectivity"));
    assert_eq!(code(&run(&["train", "--data", s(&data), "-o", s(&model), "--k-folds", "1"])), 5);

    let junk = dir.path().join("junk.daf");
    std::fs::write(&junk, b"not a model at all").unwrap();
    assert_eq!(code(&run(&["predict", "-m", s(&junk), "--data", s(&data)])), 6);
}

#[test]
fn evaluate_single_run_has_zero_std() {
    let dir = TempDir::new().unwrap();
    let data = write_toy(dir.path());
    let report = dir.path().join("e.json");
    let mut args = vec!["evaluate", "--data", s(&data), "--drop", "id", "--runs", "1", "--base-seed", "5", "--report", s(&report)];
    args.extend_from_slice(FAST);
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&report);
    assert_eq!(r["std"], 0.0);
    assert_eq!(r["seeds"], serde_json::json!([5]));
}

#[test]
fn search_emits_curve() {
    let dir = TempDir::new().unwrap();
    let data = write_toy(dir.path());
    let out = run(&["search", "--data", s(&data), "--drop", "id", "--range", "2:20:2", "--kind", "random", "--seed", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "kind,n_estimators,accuracy");
    assert_eq!(lines.len(), 11);
    assert!(lines[1..].iter().all(|l| l.starts_with("random,")));
    assert_eq!(stdout(&run(&["search", "--data", s(&data), "--drop", "id", "--range", "2:20:2", "--kind", "random", "--seed", "4"])), text);
}

#[test]
fn stats_on_published_matrix() {
    let table = data_dir().join("reference_matrix.csv");
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("s.csv");
    let out = run(&["stats", "--input", s(&table), "--csv", s(&csv)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("50.716837"), "{text}");
    assert!(text.contains("19.809381"), "{text}");
    assert!(std::fs::read_to_string(&csv).unwrap().contains("wilcoxon,SVM L.,"));

    let out = run(&["stats", "--input", s(&table), "--zero-policy", "zsplit", "--control", "daForest"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("zsplit"));
    assert_eq!(code(&run(&["stats", "--input", s(&table), "--control", "nope"])), 5);
}

#[test]
fn benchmark_is_reproducible_and_isolates_failures() {
    let dir = TempDir::new().unwrap();
    write_toy(dir.path());
    let manifest = dir.path().join("bench.toml");
    std::fs::write(
        &manifest,
        r#"runs = 2
test_fraction = 0.3

[[dataset]]
name = "toy"
path = "toy.csv"
drop = ["id"]

[[dataset]]
name = "missing"
path = "missing.csv"

[[variant]]
name = "daForest"
search = "off"
n_estimators = 5

[[variant]]
name = "gcForest"
preset = "gcforest"
n_estimators = 5
"#,
    )
    .unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out_dir in [&out_a, &out_b] {
        let out = run(&["benchmark", "--manifest", s(&manifest), "--out-dir", s(out_dir)]);
        assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).contains("toy"));
    }
    let summary = std::fs::read_to_string(out_a.join("summary.csv")).unwrap();
    assert_eq!(summary, std::fs::read_to_string(out_b.join("summary.csv")).unwrap());
    assert!(summary.lines().any(|l| l.starts_with("toy,daForest,") && l.contains(",2,0 1,")));
    assert!(summary.lines().any(|l| l.starts_with("missing,gcForest,,,0")));
    let matrix = std::fs::read_to_string(out_a.join("accuracy_matrix.csv")).unwrap();
    assert_eq!(matrix.lines().next().unwrap(), "Dataset,daForest,gcForest");
    assert_eq!(matrix.lines().count(), 2);

    let out = run(&["benchmark", "--manifest", s(&manifest), "--dataset", "toy", "--variant", "daForest", "--runs", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}
