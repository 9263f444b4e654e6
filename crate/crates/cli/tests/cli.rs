use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use infill_core::ingest::{container, Dataset, PredictionSet, Split, Tensor, TensorData};
use infill_core::metrics::PredictionGrid;
use infill_core::Raster;
use serde_json::Value;
use tempfile::TempDir;

const REGION: &str = "-110.0,38.0,-109.0,38.6";

fn infill(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infill")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = infill(args);
    assert!(
        out.status.success(),
        "infill {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Synthetic records plus a small randomly split dataset.
fn fixture() -> (TempDir, PathBuf) {
    let tmp = TempDir::new().unwrap();
    let synth = tmp.path().join("synth");
    ok(&["synth", "--region", REGION, "--seed", "3", "--cluster-rate", "40", "--points-per-cluster", "40", "--out", s(&synth)]);
    let ds = tmp.path().join("ds");
    ok(&[
        "build", "--records", s(&synth.join("records.jsonl")), "--region", REGION, "--n", "24", "--seed", "5",
        "--side-px", "10", "--val-frac", "0.25", "--test-frac", "0.25", "--out", s(&ds),
    ]);
    (tmp, ds)
}

/// Every file below `dir` except the top-level run manifest, relative.
fn files(dir: &Path) -> Vec<PathBuf> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.retain(|p| p != Path::new("run.json"));
    out.sort();
    out
}

fn assert_same_outputs(a: &Path, b: &Path) {
    let (fa, fb) = (files(a), files(b));
    assert_eq!(fa, fb);
    assert!(!fa.is_empty());
    for f in &fa {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{} differs", f.display());
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = infill(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(infill(&[]).status.code(), Some(2));
    assert_eq!(infill(&["mask", "--aggro", "0.5"]).status.code(), Some(2));
}

#[test]
fn missing_input_is_a_runtime_failure() {
    let tmp = TempDir::new().unwrap();
    let out = infill(&["mask", "--dataset", s(&tmp.path().join("nope")), "--out", s(&tmp.path().join("m"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
    assert!(!tmp.path().join("m").exists());
}

#[test]
fn build_reports_splits_and_manifest() {
    let (_tmp, ds) = fixture();
    let report = json(ds.join("build.json"));
    assert_eq!(report["windows"], 24);
    assert_eq!(report["splits"]["test"], 6);
    assert_eq!(report["seed"], 5);
    let run = json(ds.join("run.json"));
    assert_eq!(run["command"], "build");
    assert_eq!(run["seed"], 5);
    assert_eq!(run["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(run["config"]["side_px"], 10);
    assert_eq!(Dataset::read(&ds).unwrap().entries.len(), 24);
}

#[test]
fn eval_of_ground_truth_scores_one() {
    let (tmp, ds) = fixture();
    let data = Dataset::read(&ds).unwrap();
    let grids = data
        .split(Split::Test)
        .map(|(i, e)| {
            let m = &e.window.minerals;
            let probs = Raster::from_vec(m.channels, m.side, m.data.iter().map(|&v| v as f32).collect()).unwrap();
            (i, PredictionGrid { probs })
        })
        .collect();
    let preds = tmp.path().join("truth");
    PredictionSet { model: "truth".into(), grids }.write(&preds).unwrap();
    let out = tmp.path().join("eval");
    ok(&["eval", "--dataset", s(&ds), "--preds", s(&preds), "--seed", "9", "--out", s(&out)]);
    let report = json(out.join("report.json"));
    assert_eq!(report["report"]["macro_dice"], 1.0);
    assert_eq!(report["report"]["model"], "truth");
    assert_eq!(report["seed"], 9);
}

#[test]
fn eval_accepts_grids_from_a_stub_model() {
    let (tmp, ds) = fixture();
    let data = Dataset::read(&ds).unwrap();
    // A model outside this toolkit: writes constant float32 grids in the
    // exchange container directly.
    let preds = tmp.path().join("stub");
    PredictionSet {
        model: "stub".into(),
        grids: data.split(Split::Test).map(|(i, e)| (i, PredictionGrid::constant(10, e.window.side(), 0.75))).collect(),
    }
    .write(&preds)
    .unwrap();
    let out = tmp.path().join("eval");
    ok(&["eval", "--dataset", s(&ds), "--preds", s(&preds), "--out", s(&out)]);
    let report = &json(out.join("report.json"))["report"];
    assert_eq!(report["model"], "stub");
    assert_eq!(report["windows"], 6);
    for r in report["recall"].as_array().unwrap() {
        assert!(r.is_null() || r.as_f64() == Some(1.0));
    }

    let baseline = tmp.path().join("baseline");
    ok(&["eval", "--dataset", s(&ds), "--baseline", "constant:0.75", "--out", s(&baseline)]);
    let a = &json(baseline.join("report.json"))["report"];
    assert_eq!(a["macro_dice"], report["macro_dice"]);
    assert_eq!(a["counts"], report["counts"]);
}

#[test]
fn eval_rejects_incomplete_prediction_sets() {
    let (tmp, ds) = fixture();
    let preds = tmp.path().join("partial");
    PredictionSet { model: "partial".into(), grids: vec![] }.write(&preds).unwrap();
    let out = infill(&["eval", "--dataset", s(&ds), "--preds", s(&preds), "--out", s(&tmp.path().join("e"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no grid for window"));
}

#[test]
fn sweep_has_one_row_per_level() {
    let (tmp, ds) = fixture();
    let out = tmp.path().join("sweep");
    ok(&["sweep-aggro", "--dataset", s(&ds), "--baseline", "copy-input", "--grid", "0.2,0.4,0.6,0.8,1.0", "--out", s(&out)]);
    let rows = json(out.join("sweep.json"))["rows"].as_array().unwrap().clone();
    let levels: Vec<f64> = rows.iter().map(|r| r["aggressiveness"].as_f64().unwrap()).collect();
    assert_eq!(levels, [0.2, 0.4, 0.6, 0.8, 1.0]);
    for r in &rows {
        let f = r["mean_masked_fraction"].as_f64().unwrap();
        assert!(f > 0.0 && f <= 1.0);
    }
}

#[test]
fn masks_and_predictions_round_trip_through_eval() {
    let (tmp, ds) = fixture();
    let masks = tmp.path().join("masks");
    ok(&["mask", "--dataset", s(&ds), "--aggro", "0.6", "--seed", "2", "--out", s(&masks)]);
    let preds = tmp.path().join("preds");
    ok(&["predict", "--dataset", s(&ds), "--baseline", "copy-input", "--masks", s(&masks), "--out", s(&preds)]);
    let from_preds = tmp.path().join("e1");
    ok(&["eval", "--dataset", s(&ds), "--preds", s(&preds), "--masks", s(&masks), "--out", s(&from_preds)]);
    let direct = tmp.path().join("e2");
    ok(&["eval", "--dataset", s(&ds), "--baseline", "copy-input", "--aggro", "0.6", "--seed", "2", "--out", s(&direct)]);
    let (a, b) = (json(from_preds.join("report.json")), json(direct.join("report.json")));
    assert_eq!(a["report"]["counts"], b["report"]["counts"]);
    assert_eq!(a["report"]["model"], "copy-input");
}

#[test]
fn replay_is_bit_identical() {
    let (tmp, ds) = fixture();
    let again = tmp.path().join("ds-again");
    ok(&["replay", s(&ds.join("run.json")), "--out", s(&again)]);
    assert_same_outputs(&ds, &again);

    let model = tmp.path().join("model");
    ok(&["train-gp", "--dataset", s(&ds), "--epochs", "2", "--inducing", "8", "--batch-size", "4", "--seed", "1", "--out", s(&model)]);
    let model2 = tmp.path().join("model2");
    ok(&["replay", s(&model), "--out", s(&model2)]);
    assert_same_outputs(&model, &model2);

    let sweep = tmp.path().join("sweep");
    ok(&["sweep-aggro", "--dataset", s(&ds), "--model", s(&model), "--grid", "0.5,1", "--seed", "4", "--out", s(&sweep)]);
    let sweep2 = tmp.path().join("sweep2");
    ok(&["replay", s(&sweep.join("run.json")), "--out", s(&sweep2)]);
    assert_same_outputs(&sweep, &sweep2);
    let run = json(sweep2.join("run.json"));
    assert_eq!(run["argv"].as_array().unwrap().last().unwrap().as_str(), Some(s(&sweep2)));
}

#[test]
fn trained_model_evaluates() {
    let (tmp, ds) = fixture();
    let model = tmp.path().join("model");
    ok(&["train-gp", "--dataset", s(&ds), "--epochs", "3", "--inducing", "8", "--batch-size", "4", "--lr", "0.02", "--out", s(&model)]);
    let history = json(model.join("history.json"));
    assert!(history["elbo"].as_array().unwrap().iter().all(|v| v.is_f64()));
    let t = json(model.join("threshold.json"))["threshold"].as_f64().unwrap();
    let out = tmp.path().join("eval");
    ok(&["eval", "--dataset", s(&ds), "--model", s(&model), "--out", s(&out)]);
    let report = &json(out.join("report.json"))["report"];
    assert_eq!(report["model"], "svgpc");
    assert_eq!(report["threshold"].as_f64(), Some(t));
}

#[test]
fn matrices() {
    let (tmp, ds) = fixture();
    let co = tmp.path().join("co");
    ok(&["matrix", "cooccurrence", "--dataset", s(&ds), "--out", s(&co)]);
    let m = json(co.join("matrix.json"));
    assert_eq!(m["cooccurrence"].as_array().unwrap().len(), 10);
    assert_eq!(m["minerals"].as_array().unwrap().len(), 10);

    let prog = tmp.path().join("prog");
    ok(&["matrix", "progressive", "--dataset", s(&ds), "--baseline", "copy-input", "--out", s(&prog)]);
    let dice = json(prog.join("matrix.json"))["progressive"]["dice"].as_array().unwrap().clone();
    for row in &dice {
        let last = row.as_array().unwrap().last().unwrap();
        assert!(last.is_null() || last.as_f64() == Some(1.0));
    }

    let out = infill(&["matrix", "influence", "--dataset", s(&ds), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
}

fn write_f64(path: &Path, v: Vec<f64>) {
    container::write_file(path, &Tensor::new(vec![v.len()], TensorData::F64(v)).unwrap()).unwrap();
}

#[test]
fn srmm_loss_report() {
    let tmp = TempDir::new().unwrap();
    let p = |n: &str| tmp.path().join(n);
    write_f64(&p("d.m3t"), vec![0.9, 0.2, 0.7]);
    write_f64(&p("r.m3t"), vec![1.0, 0.0, 1.0]);
    write_f64(&p("phi.m3t"), vec![0.5, 0.5]);
    container::write_file(p("z.m3t"), &Tensor::new(vec![2], TensorData::U8(vec![1, 0])).unwrap()).unwrap();
    let out = p("loss");
    ok(&[
        "srmm-loss", "--p-d", s(&p("d.m3t")), "--p-phi", s(&p("phi.m3t")), "--p-r", s(&p("r.m3t")), "--z",
        s(&p("z.m3t")), "--beta", "2", "--out", s(&out),
    ]);
    let loss = &json(out.join("loss.json"))["loss"];
    assert!(loss["m3"].as_f64().unwrap() < 1e-6);
    let (m3, phi) = (loss["m3"].as_f64().unwrap(), loss["phi"].as_f64().unwrap());
    assert!((phi - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((loss["total"].as_f64().unwrap() - (m3 + 2.0 * phi)).abs() < 1e-12);
}

#[test]
fn lattice_map_export() {
    let (tmp, _) = fixture();
    let ds = tmp.path().join("lattice");
    ok(&[
        "build", "--records", s(&tmp.path().join("synth/records.jsonl")), "--region", REGION, "--side-px", "10",
        "--lattice-stride-mi", "10", "--out", s(&ds),
    ]);
    let data = Dataset::read(&ds).unwrap();
    assert!(data.entries.iter().all(|e| e.lattice.is_some() && e.split == Split::Test));
    let out = tmp.path().join("map");
    ok(&["map", "--dataset", s(&ds), "--baseline", "copy-input", "--out", s(&out)]);
    let summary = json(out.join("map.json"));
    let (w, h) = (summary["width"].as_u64().unwrap() as usize, summary["height"].as_u64().unwrap() as usize);
    let t = container::read_file(out.join("map.m3t")).unwrap();
    assert_eq!(t.dims, vec![11, h, w]);
    let text = std::fs::read_to_string(out.join("map.txt")).unwrap();
    assert_eq!(text.lines().count(), h);
    let ones = text.chars().filter(|&c| c == '1').count();
    assert_eq!(ones as u64, summary["positive_bins"].as_u64().unwrap());
    assert!(ones > 0);

    let bad = infill(&["build", "--records", s(&tmp.path().join("synth/records.jsonl")), "--region", REGION, "--side-px", "10", "--lattice-stride-mi", "7", "--out", s(&tmp.path().join("bad"))]);
    assert_eq!(bad.status.code(), Some(1));
}
