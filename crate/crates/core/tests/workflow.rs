use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::Rng;

use hte_core::cate::{fit_learner, fit_outcomes, pseudo_dr, NuisanceEstimates};
use hte_core::dataset::make_folds;
use hte_core::simgen::generate_trial;
use hte_core::stage1::run_stage1;
use hte_core::workflow::{
    emit_report, emit_study, replicate_study, run_workflow, run_workflow_observed, to_json, Format, Observer,
    StudyOptions,
};
use hte_core::{
    FoldAssignment, ForestSpec, LearnerKind, Scenario, ScenarioSpec, TrialDataset, WorkflowConfig,
};

fn small_forest() -> ForestSpec {
    ForestSpec {
        n_trees: 100,
        seed: 3,
        ..ForestSpec::default()
    }
}

fn quick_config(seed: u64) -> WorkflowConfig {
    WorkflowConfig {
        master_seed: seed,
        forest: small_forest(),
        ..WorkflowConfig::simulation()
    }
}

fn trial(sc: Scenario, seed: u64) -> TrialDataset {
    generate_trial(&ScenarioSpec::preset(sc), seed).unwrap().0
}

/// First NoHTE replicate, from seed 0 upward, on which the gate stays shut.
fn non_rejecting_null() -> TrialDataset {
    let cfg = WorkflowConfig::simulation();
    (0..)
        .map(|s| trial(Scenario::NoHte, s))
        .find(|d| !run_stage1(d, &cfg.prespecified_interactions, cfg.gate_alphas()).unwrap().proceed)
        .unwrap()
}

#[derive(Default)]
struct Recorder {
    steps: AtomicUsize,
    folds: Mutex<Vec<(&'static str, usize)>>,
}

impl Observer for Recorder {
    fn stage2_step(&self, _step: &'static str) {
        self.steps.fetch_add(1, Ordering::SeqCst);
    }

    fn folds(&self, step: &'static str, folds: &Arc<FoldAssignment>) {
        self.folds.lock().unwrap().push((step, Arc::as_ptr(folds) as usize));
    }
}

#[test]
fn closed_gate_runs_no_stage2_code() {
    let data = non_rejecting_null();
    let rec = Recorder::default();
    let report = run_workflow_observed(&data, &quick_config(1), &rec).unwrap();
    assert!(!report.gate.proceed);
    assert!(report.stage2.is_none());
    assert_eq!(rec.steps.load(Ordering::SeqCst), 0);
    assert!(rec.folds.lock().unwrap().is_empty());
    assert!(report.narrative.iter().any(|r| r.detail.contains("stopped at gate")));
    assert_eq!(report.stage1.criterion_ii, "not evaluated");
}

#[test]
fn every_stage2_step_sees_the_same_partition() {
    let data = trial(Scenario::StrongHte, 2);
    let rec = Recorder::default();
    let report = run_workflow_observed(&data, &quick_config(2), &rec).unwrap();
    assert!(report.stage2.is_some());
    let seen = rec.folds.lock().unwrap();
    let steps: Vec<&str> = seen.iter().map(|s| s.0).collect();
    assert_eq!(steps, ["nuisance", "learner", "pseudo_outcomes", "uplift", "value", "np"]);
    assert!(seen.iter().all(|s| s.1 == seen[0].1));
    assert!(rec.steps.load(Ordering::SeqCst) >= steps.len());
}

#[test]
fn strong_replicate_reaches_an_interior_threshold() {
    let data = trial(Scenario::StrongHte, 2024);
    let report = run_workflow(&data, &WorkflowConfig { master_seed: 2024, ..WorkflowConfig::simulation() }).unwrap();
    let s2 = report.stage2_or_err().unwrap();
    assert!(s2.value.interior_optimum(), "t* = {}", s2.value.t_star);
    assert!(s2.value.value_gain > 0.0);
}

fn on_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let data = trial(Scenario::StrongHte, 5);
    let cfg = WorkflowConfig {
        bootstrap_b: 100,
        ..quick_config(5)
    };
    let one = on_threads(1, || to_json(&run_workflow(&data, &cfg).unwrap()).unwrap());
    let three = on_threads(3, || to_json(&run_workflow(&data, &cfg).unwrap()).unwrap());
    let again = on_threads(1, || to_json(&run_workflow(&data, &cfg).unwrap()).unwrap());
    assert_eq!(one, three);
    assert_eq!(one, again);
}

#[test]
fn study_does_not_depend_on_thread_count() {
    let scenarios: Vec<ScenarioSpec> = [Scenario::NoHte, Scenario::StrongHte]
        .map(|s| ScenarioSpec::preset(s).with_n(600))
        .to_vec();
    let cfg = quick_config(9);
    let run = |t| on_threads(t, || replicate_study(&scenarios, 2, &cfg, StudyOptions::default()).unwrap());
    let (a, b) = (run(1), run(2));
    assert_eq!(to_json(&a).unwrap(), to_json(&b).unwrap());
}

#[test]
fn single_replicate_study_is_well_formed() {
    let scenarios = vec![ScenarioSpec::preset(Scenario::WeakHte).with_n(500)];
    let s = replicate_study(&scenarios, 1, &quick_config(4), StudyOptions { unconditional: false }).unwrap();
    let row = &s.scenarios[0];
    assert_eq!(row.replicates, 1);
    assert!(row.proceed_rate == 0.0 || row.proceed_rate == 1.0);
    assert!(row.uncond_mean_auqc_cumulative.is_nan());
    assert!(replicate_study(&scenarios, 0, &quick_config(4), StudyOptions::default()).is_err());
}

fn listing(dir: &std::path::Path) -> BTreeSet<String> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect()
}

#[test]
fn report_files_are_reproducible() {
    let data = trial(Scenario::StrongHte, 6);
    let report = run_workflow(&data, &quick_config(6)).unwrap();
    let formats: BTreeSet<Format> = [Format::Json, Format::Csv, Format::Tsv].into_iter().collect();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    emit_report(&report, a.path(), &formats).unwrap();
    emit_report(&run_workflow(&data, &quick_config(6)).unwrap(), b.path(), &formats).unwrap();
    let names = listing(a.path());
    for f in ["report.json", "uplift.csv", "value.tsv", "np.csv"] {
        assert!(names.contains(f), "{f} missing");
    }
    for f in &names {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let np = std::fs::read_to_string(a.path().join("np.csv")).unwrap();
    assert!(np.starts_with("threshold,harm_rate,harm_upper,benefit_capture,feasible"));
    assert!(np.lines().nth(1).unwrap().starts_with("-inf,"));
}

#[test]
fn stopped_report_writes_no_stage2_tables() {
    let report = run_workflow(&non_rejecting_null(), &quick_config(7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path(), &hte_core::workflow::default_formats()).unwrap();
    assert_eq!(listing(dir.path()), BTreeSet::from(["report.json".to_string()]));
}

#[test]
fn study_table_has_one_row_per_scenario() {
    let scenarios: Vec<ScenarioSpec> = Scenario::ALL.map(|s| ScenarioSpec::preset(s).with_n(400)).to_vec();
    let s = replicate_study(&scenarios, 1, &quick_config(8), StudyOptions { unconditional: false }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_study(&s, dir.path(), &hte_core::workflow::default_formats()).unwrap();
    let table = std::fs::read_to_string(dir.path().join("study.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
}

// Cross-fitting: subjects in fold k are scored by models that never saw
// fold k, so redrawing fold-k outcomes must leave those scores alone and
// move everything else.
#[test]
fn fold_outcomes_reach_only_the_other_folds() {
    let data = trial(Scenario::StrongHte, 10);
    let folds = Arc::new(make_folds(&data, 5, 11).unwrap());
    let k = 2;
    let mut rng = hte_core::seed::rng(12);
    let mut y = data.outcome().to_vec();
    for i in folds.members(k) {
        y[i] = u8::from(rng.random_bool(0.5));
    }
    let noisy = data.with_outcome(y).unwrap();
    let spec = small_forest();

    let mu = |d: &TrialDataset| {
        let o = fit_outcomes(d, &folds, &spec).unwrap();
        NuisanceEstimates {
            e_hat: vec![0.5; d.n()],
            mu0_hat: o.mu0_hat,
            mu1_hat: o.mu1_hat,
            folds: folds.clone(),
            clip: 0.01,
        }
    };
    let (nu_a, nu_b) = (mu(&data), mu(&noisy));
    let in_k = folds.members(k);
    let out_k: Vec<usize> = (0..data.n()).filter(|&i| folds.fold_of(i) != k).collect();
    let changed = |a: &[f64], b: &[f64], rows: &[usize]| rows.iter().filter(|&&i| a[i] != b[i]).count();

    assert_eq!(changed(&nu_a.mu0_hat, &nu_b.mu0_hat, &in_k), 0);
    assert_eq!(changed(&nu_a.mu1_hat, &nu_b.mu1_hat, &in_k), 0);
    assert!(changed(&nu_a.mu0_hat, &nu_b.mu0_hat, &out_k) > out_k.len() / 2);
    assert!(changed(&nu_a.mu1_hat, &nu_b.mu1_hat, &out_k) > out_k.len() / 2);

    for kind in [LearnerKind::CausalForest, LearnerKind::S, LearnerKind::T, LearnerKind::X] {
        let a = fit_learner(&data, &folds, kind, &spec, Some(&nu_a)).unwrap().oof_scores;
        let b = fit_learner(&noisy, &folds, kind, &spec, Some(&nu_b)).unwrap().oof_scores;
        assert_eq!(changed(&a, &b, &in_k), 0, "{kind:?} leaked fold outcomes into its own scores");
        assert!(changed(&a, &b, &out_k) > out_k.len() / 2, "{kind:?}");
    }

    // the evaluation surrogate does use the subject's own outcome
    let (pa, pb) = (pseudo_dr(&data, &nu_a).unwrap(), pseudo_dr(&noisy, &nu_b).unwrap());
    let flipped: Vec<usize> = in_k.iter().copied().filter(|&i| data.outcome()[i] != noisy.outcome()[i]).collect();
    assert!(!flipped.is_empty());
    assert_eq!(changed(&pa.values, &pb.values, &flipped), flipped.len());
}

/// Raw table with the public ACTG 175 column layout and made-up values.
fn write_fake_actg(path: &std::path::Path, n: usize) -> usize {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(175);
    let cols = [
        "pidnum", "age", "wtkg", "hemo", "homo", "drugs", "karnof", "oprior", "z30", "zprior", "preanti", "race",
        "gender", "str2", "strat", "symptom", "treat", "offtrt", "cd40", "cd420", "cd80", "cd820", "cens", "days",
        "arms",
    ];
    let mut out = cols.join(",") + "\n";
    let mut kept = 0;
    for i in 0..n {
        let arm = rng.random_range(0..4u8);
        kept += usize::from(arm != 3);
        let karnof = [70.0, 80.0, 90.0, 100.0][rng.random_range(0..4)];
        let cd40 = rng.random_range(100.0..600.0f64).round();
        let risk = 0.35 - 0.002 * (karnof - 85.0) * f64::from(arm != 0) - 0.15 * f64::from(arm != 0);
        let event = rng.random::<f64>() < risk;
        let days = if event { rng.random_range(20..1000) } else { rng.random_range(400..1200) };
        let bit = |rng: &mut rand_chacha::ChaCha8Rng| u8::from(rng.random::<bool>());
        let row = [
            i.to_string(),
            rng.random_range(18..60).to_string(),
            format!("{:.1}", rng.random_range(50.0..100.0f64)),
            bit(&mut rng).to_string(),
            bit(&mut rng).to_string(),
            bit(&mut rng).to_string(),
            karnof.to_string(),
            bit(&mut rng).to_string(),
            bit(&mut rng).to_string(),
            "1".into(),
            rng.random_range(0..1500).to_string(),
            bit(&mut rng).to_string(),
            bit(&mut rng).to_string(),
            bit(&mut rng).to_string(),
            rng.random_range(1..4).to_string(),
            bit(&mut rng).to_string(),
            u8::from(arm != 0).to_string(),
            bit(&mut rng).to_string(),
            cd40.to_string(),
            (cd40 + 20.0).to_string(),
            rng.random_range(300..1500).to_string(),
            rng.random_range(300..1500).to_string(),
            u8::from(event).to_string(),
            days.to_string(),
            arm.to_string(),
        ];
        out += &(row.join(",") + "\n");
    }
    std::fs::write(path, out).unwrap();
    kept
}

#[test]
fn actg_runner_flags_the_censoring_rule() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("actg.csv");
    let kept = write_fake_actg(&path, 900);
    let config = WorkflowConfig {
        forest: ForestSpec {
            n_trees: 40,
            ..small_forest()
        },
        ..WorkflowConfig::actg175()
    };
    let report = hte_core::workflow::run_actg175(&path, &config).unwrap();
    assert_eq!(report.n, kept);
    assert_eq!(report.p, 16);
    assert_eq!(report.stage1.lrt_df, 16);
    let first = &report.narrative[0];
    assert_eq!((first.stage, first.step), ("data", "outcome"));
    assert!(first.detail.contains("censored") && first.detail.contains(&kept.to_string()));
    assert!(report.stepp.is_some());
}
