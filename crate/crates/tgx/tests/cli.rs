use std::path::Path;
use std::process::{Command, Output};

use tgx::artifacts::*;

const MICRO: &str = "\
seed = 3
generator.num_graphs = 20
generator.min_nodes = 25
generator.max_nodes = 25
generator.horizon = 30
model.hidden = 4
model.layers = 2
model.mlp_layers = 1
model.epochs = 2
model.val_fraction = 0.5
explain.dim = 4
";

fn tgx(stage: &str, dir: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tgx"))
        .arg(stage)
        .arg("--config")
        .arg(dir.join("config.toml"))
        .arg("--out")
        .arg(dir)
        .args(extra)
        .env("RUST_LOG", "warn")
        .output()
        .expect("tgx runs")
}

fn ok(stage: &str, dir: &Path) {
    let out = tgx(stage, dir, &[]);
    assert!(
        out.status.success(),
        "tgx {stage} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn micro_dir(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("config.toml"), config).unwrap();
    dir
}

#[test]
fn micro_pipeline_emits_every_artifact_and_rescoring_is_byte_identical() {
    let dir = micro_dir(MICRO);
    let d = dir.path();
    for stage in ["generate", "train", "explain", "evaluate", "report"] {
        ok(stage, d);
    }
    for name in [
        DATASET,
        CHECKPOINT,
        EMBEDDINGS,
        TRAIN_LOG,
        TRAIN_SUMMARY,
        PROJECTION,
        DMD_GLOBAL,
        EXPLANATIONS_DMD,
        EXPLANATIONS_SINDY,
        METRICS,
        GRAPH_METRICS,
        MODE_SERIES,
        NODE_WEIGHTS,
        EDGE_WEIGHTS,
        SPATIOTEMPORAL,
        BRIER,
        SUMMARY,
    ] {
        let meta = std::fs::metadata(d.join(name)).unwrap_or_else(|_| panic!("{name} missing"));
        assert!(meta.len() > 0, "{name} is empty");
    }

    let metrics = std::fs::read(d.join(METRICS)).unwrap();
    let text = String::from_utf8(metrics.clone()).unwrap();
    assert!(text.starts_with("# config_hash "));
    for row in ["mw_p", "f1_threshold", "f1_window", "f1_baseline", "auc_edge2", "auc_edge3", "auc_tg", "auc_node", "accuracy"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{row},"))), "{row} row missing");
    }
    ok("evaluate", d);
    assert_eq!(std::fs::read(d.join(METRICS)).unwrap(), metrics);
    ok("report", d);
}

#[test]
fn missing_inputs_exit_with_code_3() {
    let dir = micro_dir(MICRO);
    let out = tgx("train", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(DATASET));
    let out = tgx("evaluate", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn stale_inputs_exit_with_code_3() {
    let dir = micro_dir(MICRO);
    let d = dir.path();
    ok("generate", d);
    ok("train", d);
    std::fs::write(d.join("config.toml"), format!("{MICRO}model.beta = 0.5\n")).unwrap();
    let out = tgx("explain", d, &[]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(CHECKPOINT) && err.contains("stale"), "{err}");

    let out = tgx("train", d, &["--seed", "8"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = micro_dir("model.layerz = 3\n");
    assert_eq!(tgx("generate", dir.path(), &[]).status.code(), Some(2));
    let dir = micro_dir("explain.dim = 0\n");
    assert_eq!(tgx("generate", dir.path(), &[]).status.code(), Some(2));
    let missing = tempfile::tempdir().unwrap();
    assert_eq!(tgx("generate", missing.path(), &[]).status.code(), Some(2));
}

#[test]
fn grid_reports_every_candidate() {
    let dir = micro_dir(&format!("{MICRO}grid.beta = [0.0, 0.5]\ngrid.delta = [0.4, 0.6]\ngrid.sindy_threshold = [0.05, 0.1]\n"));
    let d = dir.path();
    ok("generate", d);
    ok("grid", d);
    let text = std::fs::read_to_string(d.join(GRID)).unwrap();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    let models: Vec<_> = rows.iter().filter(|r| &r[col("stage")] == "model").collect();
    assert_eq!(models.len(), 2);
    for m in &models {
        assert!(!m[col("accuracy")].is_empty() && !m[col("linearity_residual")].is_empty());
    }
    assert_eq!(models.iter().filter(|r| &r[col("selected")] == "true").count(), 1);
    // The base mode and window with two deltas.
    assert_eq!(rows.iter().filter(|r| &r[col("stage")] == "explainer").count(), 2);
    assert_eq!(rows.iter().filter(|r| &r[col("stage")] == "sindy").count(), 2);
    assert_eq!(rows.iter().filter(|r| &r[col("selected")] == "true").count(), 3);
}
