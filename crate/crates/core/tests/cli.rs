use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bnn_core::experiment::BUNDLE_NAMES;

const SMALL_SPEC: &str = r#"
name = "small"
seed = 11

[dataset]
kind = "sine"
n_train = 60
n_test = 30

[model]
widths = [20, 200]
activations = ["relu"]
priors = ["gaussian"]

[inference]
methods = ["VI"]
vi_iterations = 300
vi_posterior_draws = 60
"#;

fn bnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bnn")).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_spec(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("spec.toml");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fit(spec: &Path, out: &Path) -> Output {
    bnn(&["fit", "--spec", s(spec), "--out", s(out)])
}

/// Drops the timing column so two runs can be compared.
fn without_timing(csv_text: &str) -> Vec<String> {
    let mut lines = csv_text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let tt = header.iter().position(|h| *h == "tt_seconds").unwrap();
    lines
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|(i, _)| *i != tt)
                .map(|(_, v)| v)
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect()
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SMALL_SPEC);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = fit(&spec, out);
        assert!(o.status.success(), "{}", stderr(&o));
        let o = bnn(&["predict", "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let cells: Vec<_> = fs::read_dir(a.join("cells")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(cells.len(), 2);
    for c in &cells {
        for f in ["manifest.json", "draws.bin", "draws.json"] {
            let fa = fs::read(a.join("cells").join(c).join(f)).unwrap();
            let fb = fs::read(b.join("cells").join(c).join(f)).unwrap();
            assert_eq!(fa, fb, "{c:?}/{f} differs");
        }
    }
    let ma = fs::read_to_string(a.join("metrics.csv")).unwrap();
    let mb = fs::read_to_string(b.join("metrics.csv")).unwrap();
    assert_eq!(without_timing(&ma), without_timing(&mb));
    for row in without_timing(&ma) {
        assert!(row.contains(",11,"), "row lacks the master seed: {row}");
    }
    let pa = fs::read(a.join("predictions").join("VIR-gaussian-w20-L1.csv")).unwrap();
    let pb = fs::read(b.join("predictions").join("VIR-gaussian-w20-L1.csv")).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn draw_header_describes_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SMALL_SPEC);
    let out = dir.path().join("run");
    assert!(fit(&spec, &out).status.success());
    let cell = out.join("cells").join("VIR-gaussian-w20-L1");
    let header: serde_json::Value = serde_json::from_str(&fs::read_to_string(cell.join("draws.json")).unwrap()).unwrap();
    let shape: Vec<u64> = header["shape"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    // 1 -> 20 -> 1 network: 20 + 20 + 20 + 1 weights and biases plus log sigma
    assert_eq!(shape, vec![60, 62]);
    assert_eq!(header["order"], "column-major");
    assert_eq!(fs::metadata(cell.join("draws.bin")).unwrap().len(), 8 * 60 * 62);
    assert!(cell.join("timing.json").exists());
    let manifest = fs::read_to_string(cell.join("manifest.json")).unwrap();
    assert!(!manifest.contains("tt_seconds"));
}

#[test]
fn predicted_metrics_match_the_prediction_table() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SMALL_SPEC);
    let out = dir.path().join("run");
    assert!(fit(&spec, &out).status.success());
    assert!(bnn(&["predict", "--out", s(&out)]).status.success());
    let mut table = csv::Reader::from_path(out.join("predictions").join("VIR-gaussian-w20-L1.csv")).unwrap();
    let headers = table.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (yt, mean, lo, hi) = (col("y_true"), col("mean"), col("y_q025"), col("y_q975"));
    let (mut sq, mut inside, mut n) = (0.0, 0, 0);
    for rec in table.records() {
        let r: Vec<f64> = rec.unwrap().iter().map(|v| v.parse().unwrap()).collect();
        sq += (r[yt] - r[mean]).powi(2);
        inside += usize::from(r[lo] <= r[yt] && r[yt] <= r[hi]);
        n += 1;
    }
    assert_eq!(n, 30);
    let metrics: Vec<bnn_core::predictive::MetricRecord> = csv::Reader::from_path(out.join("metrics.csv"))
        .unwrap()
        .deserialize()
        .map(|r| r.unwrap())
        .collect();
    let m = metrics.iter().find(|m| m.run_id == "VIR-gaussian-w20-L1").unwrap();
    assert!(((sq / n as f64).sqrt() - m.rmse).abs() < 1e-12);
    assert!((inside as f64 / n as f64 - m.ec_obs).abs() < 1e-12);
    assert_eq!(m.method, "VIR");
    assert!(out.join("curves").join("VIR-gaussian-w20-L1.csv").exists());
}

#[test]
fn missing_dataset_is_a_spec_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL_SPEC.replace("[dataset]\nkind = \"sine\"\nn_train = 60\nn_test = 30\n", "");
    let spec = write_spec(dir.path(), &text);
    let o = fit(&spec, &dir.path().join("run"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dataset"), "{}", stderr(&o));
}

#[test]
fn later_stages_need_fitted_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["predict", "assess", "combine"] {
        let o = bnn(&[stage, "--out", s(&dir.path().join("nothing"))]);
        assert_eq!(o.status.code(), Some(3), "{stage}: {}", stderr(&o));
    }
    // fitted but never assessed: combine lacks the elpd records
    let spec = write_spec(dir.path(), &format!("{SMALL_SPEC}\n[combine]\nmembers = 2\n"));
    let out = dir.path().join("run");
    assert!(fit(&spec, &out).status.success());
    let o = bnn(&["combine", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &SMALL_SPEC.replace("[20, 200]", "[5]"));
    let out = dir.path().join("run");
    assert!(fit(&spec, &out).status.success());
    let o = fit(&spec, &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--force"));
    let o = bnn(&["fit", "--spec", s(&spec), "--out", s(&out), "--force"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn single_member_combination_has_unit_weights() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{}\n[combine]\nmembers = 1\n", SMALL_SPEC.replace("[20, 200]", "[10]"));
    let spec = write_spec(dir.path(), &text);
    let out = dir.path().join("run");
    assert!(fit(&spec, &out).status.success());
    for stage in ["predict", "assess", "combine"] {
        let o = bnn(&[stage, "--out", s(&out)]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
    }
    let w: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("combine/weights.json")).unwrap()).unwrap();
    let weights = w[0]["weights"].as_object().unwrap();
    assert_eq!(weights.len(), 3);
    for (method, v) in weights {
        assert_eq!(v, &serde_json::json!([1.0]), "{method}");
    }
}

#[test]
fn assess_reports_one_khat_per_training_point() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &SMALL_SPEC.replace("[20, 200]", "[10]"));
    let out = dir.path().join("run");
    assert!(fit(&spec, &out).status.success());
    let o = bnn(&["assess", "--out", s(&out), "--spec", s(&spec)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rec: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("elpd/VIR-gaussian-w10-L1.json")).unwrap()).unwrap();
    assert_eq!(rec["loo"]["khat"].as_array().unwrap().len(), 60);
    assert_eq!(rec["loo"]["pointwise"].as_array().unwrap().len(), 60);
    assert_eq!(rec["waic"]["pointwise"].as_array().unwrap().len(), 60);
}

#[test]
fn stage_rejects_a_different_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &SMALL_SPEC.replace("[20, 200]", "[10]"));
    let out = dir.path().join("run");
    assert!(fit(&spec, &out).status.success());
    let other = dir.path().join("other.toml");
    fs::write(&other, SMALL_SPEC.replace("[20, 200]", "[11]")).unwrap();
    let o = bnn(&["predict", "--out", s(&out), "--spec", s(&other)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_bundle_lists_valid_names() {
    let o = bnn(&["reproduce", "no-such-bundle", "--dry-run"]);
    assert_eq!(o.status.code(), Some(2));
    for name in BUNDLE_NAMES {
        assert!(stderr(&o).contains(name));
    }
}

fn planned_cells(bundle: &str) -> Vec<String> {
    let o = bnn(&["reproduce", bundle, "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    String::from_utf8(o.stdout).unwrap().lines().skip(1).map(String::from).collect()
}

#[test]
fn depth_sweep_plans_24_cells_per_engine() {
    let cells = planned_cells("depth-sweep");
    assert_eq!(cells.iter().filter(|l| l.contains("\tVI")).count(), 24);
    assert_eq!(cells.iter().filter(|l| l.contains("\tHMC")).count(), 24);
}

#[test]
fn stacking_bundle_plans_ten_members() {
    assert_eq!(planned_cells("stacking-related").len(), 10);
}

/// Every bundle completes end to end when shrunk.
#[test]
fn smoke_runs_all_bundles() {
    let dir = tempfile::tempdir().unwrap();
    for bundle in BUNDLE_NAMES {
        let out = dir.path().join(bundle);
        let o = bnn(&["reproduce", bundle, "--out", s(&out), "--scale", "0.001", "--max-tree-depth", "2"]);
        assert!(o.status.success(), "{bundle}: {}", stderr(&o));
        assert!(out.join("metrics.csv").exists());
        assert!(out.join("elpd.csv").exists());
    }
}

#[test]
fn only_keeps_the_full_grid_seeds() {
    let full = planned_cells("width-sweep");
    let o = bnn(&["reproduce", "width-sweep", "--dry-run", "--only", "VIS-gaussian-w2000-L1,HMCR-student-t-w20-L1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let picked: Vec<String> = String::from_utf8_lossy(&o.stdout).lines().skip(1).map(str::to_owned).collect();
    assert_eq!(picked.len(), 2);
    for line in &picked {
        assert!(full.contains(line), "{line}");
    }
    let o = bnn(&["reproduce", "width-sweep", "--dry-run", "--only", "VIS-gaussian-w3-L1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("VIS-gaussian-w3-L1"));
}
