use std::path::Path;
use std::process::{Command, Output};

fn shelfsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shelfsim")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = shelfsim(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn tiny_store(dir: &Path) {
    std::fs::write(
        dir.join("run.cfg"),
        "gen.n_regions=2\ngen.n_products=2\ngen.horizon=90\ngen.start_date=2019-05-01\n\
         nuts.chains=2\nnuts.tune=100\nnuts.draws=100\nbaselines.rf_trees=5\nbaselines.mlp_epochs=2\n\
         dqn.learning_starts=100\ndqn.log_interval=500\n",
    )
    .unwrap();
    ok(dir, &["--config", "run.cfg", "--seed", "3", "gen-data", "--out-dir", "data"]);
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn gen_data_writes_store_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    tiny_store(dir.path());
    let data = dir.path().join("data");
    for f in ["sales.csv", "placements.csv", "truth.json", "env.json", "manifest.json"] {
        assert!(data.join(f).is_file(), "missing {f}");
    }
    let sales = csv_rows(&data.join("sales.csv"));
    assert!(!sales.is_empty());
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gen-data");
    assert_eq!(manifest["seed"], 3);
    assert!(manifest["outputs"].as_array().unwrap().len() >= 3);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "nuts.chians=3\n").unwrap();
    let out = shelfsim(dir.path(), &["--config", "bad.cfg", "gen-data", "--out-dir", "data"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nuts.chians"));
    assert!(!dir.path().join("data").exists());
}

#[test]
fn malformed_value_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "dqn.discount=fast\n").unwrap();
    let out = shelfsim(dir.path(), &["--config", "bad.cfg", "gen-data", "--out-dir", "data"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dqn.discount"));
}

#[test]
fn full_pipeline_on_a_tiny_store() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny_store(d);
    let cfg = ["--config", "run.cfg", "--seed", "3"];
    let run = |rest: &[&str]| ok(d, &[&cfg[..], rest].concat());

    run(&["fit", "--data-dir", "data", "--preset", "desk", "--out", "out/post.bin"]);
    assert!(d.join("out/post_diagnostics.json").is_file());

    run(&["evaluate", "--data-dir", "data", "--posterior", "out/post.bin", "--out", "out/eval.json"]);
    let table = csv_rows(&d.join("out/eval.csv"));
    let models: Vec<&str> = table.iter().map(|r| &r[0]).collect();
    assert_eq!(models, ["OLS", "RF", "MLP", "PSD"]);
    let eval: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("out/eval.json")).unwrap()).unwrap();
    let coverage = eval["interval_coverage"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&coverage));

    run(&["train-dqn", "--posterior", "out/post.bin", "--iterations", "1500", "--out", "out/q.bin"]);
    let log = csv_rows(&d.join("out/q_log.csv"));
    assert_eq!(log.len(), 3);
    assert_eq!(&log[2][0], "1500");

    run(&[
        "evaluate-policies",
        "--posterior",
        "out/post.bin",
        "--qnet",
        "out/q.bin",
        "--lengths",
        "5,10",
        "--seeds",
        "3",
        "--out",
        "out/policies.csv",
    ]);
    let rows = csv_rows(&d.join("out/policies.csv"));
    assert_eq!(rows.len(), 4 * 2 * 3);
    for r in &rows {
        assert!(["random", "naive", "tabu", "dqn"].contains(&&r[0]));
        assert!(r[3].parse::<f64>().unwrap().is_finite());
    }
}
