use std::path::Path;
use std::process::{Command, Output};

fn hte(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hte"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_then_each_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = hte(&["simulate", "--scenario", "strong", "--n", "500", "--reps", "2", "--seed", "3", "--out", "sim"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trial_strong_000.csv", "truth_strong_000.csv", "trial_strong_001.csv", "truth_strong_001.csv"] {
        assert!(d.join("sim").join(f).exists(), "{f}");
    }
    let header = std::fs::read_to_string(d.join("sim/trial_strong_000.csv")).unwrap();
    assert!(header.starts_with("x1,x2,x3,a,y\n"));
    let a = std::fs::read(d.join("sim/trial_strong_000.csv")).unwrap();
    let b = std::fs::read(d.join("sim/trial_strong_001.csv")).unwrap();
    assert_ne!(a, b);

    let o = hte(
        &["stage1", "--input", "sim/trial_strong_000.csv", "--stepp-biomarker", "x1", "--out", "s1"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s1 = json(&d.join("s1/stage1.json"));
    assert_eq!(s1["stage1"]["lrt_df"], 3);
    assert!(s1["stepp"].is_object());
    assert!(d.join("s1/stepp.csv").exists());

    let o = hte(&["stage2", "--input", "sim/trial_strong_000.csv", "--trees", "40", "--out", "s2"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["stage2.json", "uplift.csv", "value.csv", "np.csv"] {
        assert!(d.join("s2").join(f).exists(), "{f}");
    }

    let o = hte(&["run", "--input", "sim/trial_strong_000.csv", "--trees", "40", "--format", "json", "--out", "r"], d);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&d.join("r/report.json"));
    assert_eq!(r["n"], 500);
    assert!(!d.join("r/uplift.csv").exists());
}

#[test]
fn run_on_a_simulated_trial_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = |out: &'static str| ["run", "--scenario", "strong", "--n", "400", "--data-seed", "9", "--trees", "30", "--out", out];
    assert_eq!(code(&hte(&args("a"), d)), 0);
    assert_eq!(code(&hte(&args("b"), d)), 0);
    for f in ["report.json", "uplift.csv", "value.csv", "np.csv"] {
        let x = std::fs::read(d.join("a").join(f)).unwrap();
        let y = std::fs::read(d.join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn small_study() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = hte(
        &["study", "--reps", "2", "--scenarios", "no,strong", "--n", "300", "--trees", "20", "--out", "st"],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("scenario"));
    let s = json(&d.join("st/study.json"));
    let labels: Vec<&str> = s["scenarios"].as_array().unwrap().iter().map(|x| x["scenario"].as_str().unwrap()).collect();
    assert_eq!(labels, ["no", "strong"]);
    assert_eq!(s["records"].as_array().unwrap().len(), 4);
    assert!(s["scenarios"].as_array().unwrap().iter().all(|x| x["failures"] == 0));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // usage errors
    assert_eq!(code(&hte(&["run", "--scenario", "strong", "--bogus", "--out", "x"], d)), 2);
    assert_eq!(code(&hte(&["run", "--out", "x"], d)), 2);
    // invalid configuration
    assert_eq!(code(&hte(&["run", "--scenario", "strong", "--alpha", "2", "--out", "x"], d)), 2);
    assert_eq!(code(&hte(&["run", "--scenario", "strong", "--learner", "z", "--out", "x"], d)), 2);
    std::fs::write(d.join("bad.toml"), "alpah = 0.1\n").unwrap();
    assert_eq!(code(&hte(&["run", "--scenario", "strong", "--config", "bad.toml", "--out", "x"], d)), 2);
    // missing files
    assert_eq!(code(&hte(&["run", "--input", "missing.csv", "--out", "x"], d)), 4);
    assert_eq!(code(&hte(&["run", "--scenario", "strong", "--config", "missing.toml", "--out", "x"], d)), 4);
    // malformed data
    std::fs::write(d.join("bad.csv"), "x1,a,y\n0.5,2,1\n").unwrap();
    let o = hte(&["stage1", "--input", "bad.csv", "--out", "x"], d);
    assert_ne!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), "delta = 0.05\n[forest]\nn_trees = 25\n").unwrap();
    let o = hte(
        &[
            "run", "--scenario", "strong", "--n", "400", "--delta", "0.07", "--alpha-harm", "0.2", "--trees", "60",
            "--config", "c.toml", "--format", "json", "--out", "r",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let c = &json(&d.join("r/report.json"))["config"];
    assert_eq!(c["delta"], 0.05);
    assert_eq!(c["forest"]["n_trees"], 25);
    assert_eq!(c["alpha_harm"], 0.2);
}
