use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/optdigits.csv")
}

fn symfeat(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symfeat"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--data")
        .arg(data())
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn convert_and_stats_on_the_vendored_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let o = symfeat(dir.path(), &["data", "convert"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stats = read_json(dir.path().join("stats.json"));
    assert_eq!(stats["rows"], 1797);
    assert_eq!(stats["classes"], 10);
    for c in stats["class_counts"].as_array().unwrap() {
        assert!((174..=183).contains(&c.as_u64().unwrap()));
    }
    let canonical = std::fs::read_to_string(dir.path().join("optdigits.csv")).unwrap();
    assert_eq!(canonical.lines().count(), 1797);
    let manifest = read_json(dir.path().join("manifest.json"));
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["command"], "data convert");
}

#[test]
fn fetch_without_network_points_at_the_vendored_copy() {
    let dir = tempfile::tempdir().unwrap();
    let o = symfeat(dir.path(), &["data", "fetch", "--url", "http://127.0.0.1:9/digits.csv"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("vendored"), "{}", stderr(&o));
}

#[test]
fn train_then_eval_reproduces_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    let o = symfeat(&train_dir, &["train", "--epochs", "2", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_json(train_dir.join("report.json"));
    let model = train_dir.join("model.json");
    let curve = std::fs::read_to_string(train_dir.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);

    let eval_dir = dir.path().join("eval");
    let o = symfeat(&eval_dir, &["eval", "--model", model.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let eval = read_json(eval_dir.join("eval.json"));
    assert_eq!(eval["r"].as_f64().unwrap().to_bits(), report["r"].as_f64().unwrap().to_bits());
    assert_eq!(eval["test"], report["test"]);

    let inv_dir = dir.path().join("eval_inv");
    let o = symfeat(&inv_dir, &["eval", "--invert", "--model", model.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let inv = read_json(inv_dir.join("eval.json"));
    assert_eq!(inv["r"], report["r_bar"]);
    assert_eq!(read_json(inv_dir.join("manifest.json"))["config"]["invert"], true);
}

#[test]
fn invariant_model_ignores_invert_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = symfeat(&dir.path().join("t"), &["train", "--epochs", "1", "--features", "neighbor", "--bias"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let model = dir.path().join("t/model.json");
    let a = symfeat(&dir.path().join("a"), &["eval", "--model", model.to_str().unwrap()]);
    let b = symfeat(&dir.path().join("b"), &["eval", "--invert", "--model", model.to_str().unwrap()]);
    assert_eq!((code(&a), code(&b)), (0, 0));
    let ra = std::fs::read(dir.path().join("a/eval.json")).unwrap();
    let rb = std::fs::read(dir.path().join("b/eval.json")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn eval_rejects_mismatched_model() {
    let dir = tempfile::tempdir().unwrap();
    let narrow = symfeat::Mlp::init(&[32, 10], false, 0).unwrap();
    let mut file = symfeat::ModelFile::new(&narrow, &symfeat::FeatureMap::new(symfeat::FeatureMapKind::Identity));
    file.dims = vec![32, 10];
    let path = dir.path().join("narrow.json");
    std::fs::write(&path, file.to_json().unwrap()).unwrap();
    let o = symfeat(dir.path(), &["eval", "--model", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("inputs"), "{}", stderr(&o));
}

#[test]
fn table2_rows_have_equal_accuracy_under_inversion() {
    let dir = tempfile::tempdir().unwrap();
    let o = symfeat(dir.path(), &["reproduce", "table2", "--seeds", "0", "--epochs", "1"]);
    let csv = std::fs::read_to_string(dir.path().join("table2.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    let report = read_json(dir.path().join("table2.json"));
    for cell in report["results"].as_array().unwrap() {
        assert_eq!(cell["report"]["r"], cell["report"]["r_bar"]);
    }
    let bands = std::fs::read_to_string(dir.path().join("bands.csv")).unwrap();
    assert!(bands.contains("PASS,\"T2 accuracy(X_test) == accuracy(-X_test)\""));
    // one epoch may miss accuracy bands; the exit status must say so
    assert_eq!(code(&o), if bands.contains("FAIL") { 2 } else { 0 });
    assert!(std::fs::read_to_string(dir.path().join("table2.svg")).unwrap().contains("<svg"));
}

#[test]
fn table1_bound_holds() {
    let dir = tempfile::tempdir().unwrap();
    let o = symfeat(dir.path(), &["reproduce", "table1", "--seeds", "1", "--epochs", "1"]);
    let csv = std::fs::read_to_string(dir.path().join("table1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
    let bands = std::fs::read_to_string(dir.path().join("bands.csv")).unwrap();
    assert!(bands.contains("PASS,\"T1 R + R̄ <= 1 on every no-bias cell\""), "{bands}");
    assert_eq!(code(&o), if bands.contains("FAIL") { 2 } else { 0 });
}

#[test]
fn figure1_is_deterministic_and_complementary() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        let o = symfeat(&out, &["reproduce", "figure1"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        ["original", "inverted", "neighbor"].map(|k| std::fs::read(out.join(format!("figure1_{k}.pgm"))).unwrap())
    };
    let first = run("a");
    assert_eq!(first, run("b"));
    let px = |bytes: &[u8]| -> Vec<u16> {
        String::from_utf8_lossy(bytes)
            .split_whitespace()
            .skip(4)
            .map(|t| t.parse().unwrap())
            .collect()
    };
    let (o, i) = (px(&first[0]), px(&first[1]));
    assert_eq!(o.len(), 64);
    assert!(o.iter().zip(&i).all(|(a, b)| a + b == 255));
}

#[test]
fn weight_flip_probe() {
    let dir = tempfile::tempdir().unwrap();
    let o = symfeat(dir.path(), &["probe", "weight-flip", "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(dir.path().join("weight_flip.json"));
    assert!(r["symmetrized"]["deviation"].as_f64().unwrap() <= 1e-9);
    assert_eq!(r["pass"], true);

    let o = symfeat(dir.path(), &["probe", "weight-flip", "--bias"]);
    assert_eq!(code(&o), 1, "a precondition violation is a usage error");
}

#[test]
fn orbit_probe_is_flat_for_360() {
    let dir = tempfile::tempdir().unwrap();
    let o = symfeat(dir.path(), &["probe", "orbit", "--n", "360"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(dir.path().join("orbit.json"));
    assert!(r["relative_spread"].as_f64().unwrap() <= 1e-9);
    let csv = std::fs::read_to_string(dir.path().join("orbit.csv")).unwrap();
    assert_eq!(csv.lines().count(), 361);
}

#[test]
fn goldstone_probe_small_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let o = symfeat(dir.path(), &["probe", "goldstone", "--sweep", "4,16"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(dir.path().join("goldstone.json"));
    assert_eq!(r["entries"].as_array().unwrap().len(), 2);
    assert_eq!(r["non_increasing"], true);
}

#[test]
fn sampled_loss_with_full_inclusion_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let o = symfeat(dir.path(), &["probe", "sampled-loss", "--mu", "1", "--trials", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(dir.path().join("sampled_loss.json"));
    assert_eq!(r["ratio"], 1.0);
    assert_eq!(r["mean"], r["omega"]);
}

#[test]
fn config_file_precedence_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# quick run\nepochs = 1\nlr = 0.02\nseed = 5\n").unwrap();
    let out = dir.path().join("run");
    let o = symfeat(&out, &["train", "--config", cfg.to_str().unwrap(), "--seed", "6"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_json(out.join("manifest.json"));
    assert_eq!(m["config"]["epochs"], 1);
    assert_eq!(m["config"]["lr"], 0.02);
    assert_eq!(m["config"]["seed"], 6);

    std::fs::write(&cfg, "colour = blue\n").unwrap();
    let o = symfeat(&out, &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown key"));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&symfeat(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&symfeat(dir.path(), &["train", "--features", "cubic"])), 1);
    let o = Command::new(env!("CARGO_BIN_EXE_symfeat"))
        .args(["data", "stats", "--data", "/nonexistent/digits.csv", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = symfeat(&dir.path().join("a"), &["train", "--epochs", "1", "--features", "perm", "--perm-seed", "2"]);
    let b = symfeat(&dir.path().join("b"), &["train", "--epochs", "1", "--features", "perm", "--perm-seed", "2"]);
    assert_eq!((code(&a), code(&b)), (0, 0));
    for f in ["model.json", "report.json", "curve.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let model = read_json(dir.path().join("a/model.json"));
    assert_eq!(model["feature_map"]["seed"], 2);
    assert_eq!(model["permutation"].as_array().unwrap().len(), 64);
}
