use std::path::Path;
use std::sync::Arc;

use serde::Serialize;

use crate::cate::learners::{fit_learner, LearnerSummary};
use crate::cate::nuisance::{fit_nuisance, PropensityMode};
use crate::cate::pseudo::{pseudo_dr, pseudo_ipw};
use crate::dataset::{actg175, make_folds, preprocess_actg175, read_raw_table, FoldAssignment, TrialDataset};
use crate::error::{HteError, Result};
use crate::policy::{
    bootstrap_se, np_frontier, threshold_grid, uplift_curve, value_curve, value_curve_se, NpFrontier, NpOptions,
    NpStatus, PolicyValueCurve, UpliftCurve,
};
use crate::seed;
use crate::stage1::stepp::{default_window, stepp_band, stepp_curve, SteppCurve};
use crate::stage1::{run_stage1, GateDecision, GateReason, Stage1Report};
use crate::workflow::config::{SteppConfig, WorkflowConfig};
use crate::workflow::report::fmt_num;

/// One entry of the decision log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub stage: &'static str,
    pub step: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage2Report {
    pub learner: LearnerSummary,
    pub propensity: PropensityMode,
    pub k: usize,
    pub fold_seed: u64,
    pub ate_dr: f64,
    pub ate_dr_se: Option<f64>,
    pub ate_ipw: f64,
    pub uplift: UpliftCurve,
    pub value: PolicyValueCurve,
    pub np: NpFrontier,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkflowReport {
    pub n: usize,
    pub p: usize,
    pub covariates: Vec<String>,
    pub config: WorkflowConfig,
    pub stage1: Stage1Report,
    pub stepp: Option<SteppCurve>,
    pub gate: GateDecision,
    pub stage2: Option<Stage2Report>,
    pub narrative: Vec<DecisionRecord>,
}

/// Hooks into the Stage 2 pipeline, used to check that nothing runs past a
/// closed gate and that every step sees the same fold partition.
pub trait Observer: Sync {
    fn stage2_step(&self, _step: &'static str) {}
    fn folds(&self, _step: &'static str, _folds: &Arc<FoldAssignment>) {}
}

pub struct NoObserver;

impl Observer for NoObserver {}

pub fn run_workflow(data: &TrialDataset, config: &WorkflowConfig) -> Result<WorkflowReport> {
    run_workflow_observed(data, config, &NoObserver)
}

pub fn run_workflow_observed(data: &TrialDataset, config: &WorkflowConfig, observer: &dyn Observer) -> Result<WorkflowReport> {
    config.validate()?;
    let mut narrative = Vec::new();
    let stage1 = run_stage1(data, &config.prespecified_interactions, config.gate_alphas())
        .map_err(|e| e.context("stage 1"))?;
    let alphas = config.gate_alphas();
    narrative.push(DecisionRecord {
        stage: "stage1",
        step: "omnibus",
        detail: format!(
            "likelihood-ratio test of all {} treatment-covariate interactions: chi2 = {}, p = {} at alpha = {}",
            stage1.lrt_df,
            fmt_num(stage1.lrt_stat),
            fmt_num(stage1.lrt_p),
            alphas.omnibus
        ),
    });
    if stage1.interactions.is_empty() {
        narrative.push(DecisionRecord {
            stage: "stage1",
            step: "interactions",
            detail: "no prespecified interactions".into(),
        });
    }
    for t in &stage1.interactions {
        narrative.push(DecisionRecord {
            stage: "stage1",
            step: "interactions",
            detail: format!(
                "Wald test of {}: estimate {}, raw p = {}, Holm p = {} at alpha = {}",
                t.name,
                fmt_num(t.estimate),
                fmt_num(t.raw_p),
                fmt_num(t.holm_p),
                alphas.interactions
            ),
        });
    }
    let stepp = match &config.stepp {
        Some(sc) => Some(run_stepp(data, sc, config.master_seed)?),
        None => None,
    };
    if let Some(c) = &stepp {
        narrative.push(DecisionRecord {
            stage: "stage1",
            step: "stepp",
            detail: format!(
                "STEPP along {}: {} windows of {} subjects, {} outside the permutation band",
                c.biomarker,
                c.len(),
                c.window_size,
                c.windows_outside_band().unwrap_or(0)
            ),
        });
    }
    let gate = stage1.gate();
    narrative.push(DecisionRecord {
        stage: "gate",
        step: "decision",
        detail: if gate.proceed {
            let why: Vec<String> = gate
                .reasons
                .iter()
                .map(|r| match r {
                    GateReason::Omnibus { p } => format!("omnibus LRT p = {}", fmt_num(*p)),
                    GateReason::PrespecifiedInteraction { name, holm_p } => {
                        format!("{name} interaction Holm p = {}", fmt_num(*holm_p))
                    }
                })
                .collect();
            format!("proceed to stage 2: {}", why.join("; "))
        } else {
            "stopped at gate: no heterogeneity criterion met".into()
        },
    });
    let stage2 = if gate.proceed {
        Some(run_stage2(data, config, observer, &mut narrative).map_err(|e| e.context("stage 2"))?)
    } else {
        None
    };
    Ok(WorkflowReport {
        n: data.n(),
        p: data.p(),
        covariates: data.names().to_vec(),
        config: config.clone(),
        stage1,
        stepp,
        gate,
        stage2,
        narrative,
    })
}

/// STEPP curve with its permutation band, seeded from the master seed.
pub fn run_stepp(data: &TrialDataset, sc: &SteppConfig, master_seed: u64) -> Result<SteppCurve> {
    let (w, s) = default_window(data.n());
    let window = sc.window.unwrap_or(w);
    let step = sc.step.unwrap_or(if sc.window.is_some() { (window / 2).max(1) } else { s });
    let curve = stepp_curve(data, &sc.biomarker, window, step).map_err(|e| e.context("STEPP"))?;
    let band = stepp_band(data, &curve, sc.permutations, sc.level, seed::derive(master_seed, &[seed::stream::STEPP]))
        .map_err(|e| e.context("STEPP band"))?;
    Ok(curve.with_band(band))
}

/// Stage 2 on one shared fold partition.
pub fn run_stage2(
    data: &TrialDataset,
    config: &WorkflowConfig,
    observer: &dyn Observer,
    narrative: &mut Vec<DecisionRecord>,
) -> Result<Stage2Report> {
    observer.stage2_step("folds");
    let fold_seed = seed::derive(config.master_seed, &[seed::stream::FOLDS]);
    let folds = Arc::new(make_folds(data, config.k, fold_seed)?);
    let forest = config
        .forest
        .with_seed(seed::derive(config.master_seed, &[seed::stream::WORKFLOW, config.forest.seed]));

    observer.stage2_step("nuisance");
    observer.folds("nuisance", &folds);
    let nuisance = fit_nuisance(data, &folds, config.propensity, config.propensity_clip, &forest)
        .map_err(|e| e.context("nuisance models"))?;

    observer.stage2_step("learner");
    observer.folds("learner", &folds);
    let model = fit_learner(data, &folds, config.learner, &forest, Some(&nuisance))
        .map_err(|e| e.context(format!("{} learner", config.learner.label())))?;
    let scores = &model.oof_scores;
    narrative.push(DecisionRecord {
        stage: "stage2",
        step: "learner",
        detail: format!(
            "{} learner cross-fitted over K = {} folds with {} trees per forest",
            config.learner.label(),
            config.k,
            forest.n_trees
        ),
    });

    observer.stage2_step("pseudo_outcomes");
    observer.folds("pseudo_outcomes", &nuisance.folds);
    let dr = pseudo_dr(data, &nuisance)?;
    let ipw = pseudo_ipw(data, &nuisance)?;
    let boot_seed = seed::derive(config.master_seed, &[seed::stream::BOOTSTRAP]);
    let ate_dr_se = if config.bootstrap_b > 0 {
        let v = &dr.values;
        let mean = |idx: &[usize]| idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64;
        Some(bootstrap_se(mean, data.n(), config.bootstrap_b, boot_seed)?.se)
    } else {
        None
    };

    observer.stage2_step("uplift");
    observer.folds("uplift", &nuisance.folds);
    let uplift = uplift_curve(scores, &dr, config.uplift_grid_points)?;
    narrative.push(DecisionRecord {
        stage: "stage2",
        step: "uplift",
        detail: format!(
            "AUQC {:.4} (normalized), {:.4} (cumulative); DR ATE {:.4}",
            uplift.auqc_normalized,
            uplift.auqc_cumulative,
            dr.mean()
        ),
    });

    observer.stage2_step("value");
    observer.folds("value", &nuisance.folds);
    let thresholds = threshold_grid(scores, config.n_quantiles)?;
    let mut value = value_curve(data, &nuisance, scores, &thresholds)?;
    if config.bootstrap_b > 0 {
        value.se = Some(value_curve_se(data, &nuisance, scores, &thresholds, config.bootstrap_b, boot_seed)?);
    }
    narrative.push(DecisionRecord {
        stage: "stage2",
        step: "threshold",
        detail: format!(
            "value maximized at t* = {} (V = {:.4}); treat-all {:.4}, treat-none {:.4}, gain {:.4}{}",
            fmt_num(value.t_star),
            value.v_star,
            value.value_treat_all,
            value.value_treat_none,
            value.value_gain,
            if value.interior_optimum() { "; interior optimum" } else { "" }
        ),
    });

    observer.stage2_step("np");
    observer.folds("np", &nuisance.folds);
    let np = np_frontier(
        scores,
        &dr,
        &thresholds,
        NpOptions {
            delta: config.delta,
            alpha_harm: config.alpha_harm,
            conf: config.wilson_conf,
            capture_floor: config.capture_floor,
        },
    )?;
    narrative.push(DecisionRecord {
        stage: "stage2",
        step: "np",
        detail: match np.chosen.status {
            NpStatus::Feasible => format!(
                "harm bound {} met at t = {} with harm upper bound {:.4} and capture {:.4}",
                config.alpha_harm, fmt_num(np.chosen.threshold), np.chosen.harm_upper, np.chosen.benefit_capture
            ),
            NpStatus::BestAttainable => format!(
                "no threshold meets harm bound {}; best attainable t = {} with harm {:.4} and capture {:.4}",
                config.alpha_harm, fmt_num(np.chosen.threshold), np.chosen.harm_rate, np.chosen.benefit_capture
            ),
        },
    });
    Ok(Stage2Report {
        learner: model.summary(),
        propensity: config.propensity,
        k: folds.k(),
        fold_seed,
        ate_dr: dr.mean(),
        ate_dr_se,
        ate_ipw: ipw.mean(),
        uplift,
        value,
        np,
    })
}

/// Reads the raw ACTG 175 table, keeps the two compared arms and runs the
/// workflow on the default covariate list.
pub fn run_actg175(path: &Path, config: &WorkflowConfig) -> Result<WorkflowReport> {
    let raw = read_raw_table(path)?;
    let data = preprocess_actg175(&raw, &actg175::default_covariates())
        .map_err(|e| e.context(format!("ACTG 175 preprocessing of {}", path.display())))?;
    let mut report = run_workflow(&data, config)?;
    report.narrative.insert(
        0,
        DecisionRecord {
            stage: "data",
            step: "outcome",
            detail: format!(
                "ACTG 175: ddI monotherapy arm dropped, n = {}; Y = 0 for an event on or before day {}; \
                 subjects censored earlier without an event are kept with Y = 1 (assumed, not stated by the source)",
                data.n(),
                actg175::HORIZON_DAYS
            ),
        },
    );
    Ok(report)
}

impl WorkflowReport {
    pub fn stage2_or_err(&self) -> Result<&Stage2Report> {
        self.stage2
            .as_ref()
            .ok_or_else(|| HteError::Domain("the workflow stopped at the gate".into()))
    }
}
