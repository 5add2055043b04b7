//! Multi-replicate simulation study over the preset scenarios.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{HteError, Result};
use crate::policy::NpStatus;
use crate::seed;
use crate::simgen::{generate_trial, ScenarioSpec};
use crate::stats::mean;
use crate::workflow::config::WorkflowConfig;
use crate::workflow::run::{run_stage2, run_workflow, NoObserver, Stage2Report};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage2Metrics {
    pub auqc_cumulative: f64,
    pub auqc_normalized: f64,
    pub value_gain: f64,
    #[serde(serialize_with = "crate::serde_float::scalar")]
    pub t_star: f64,
    pub interior_optimum: bool,
    pub np_feasible: bool,
    pub ate_dr: f64,
}

impl Stage2Metrics {
    fn from_report(s: &Stage2Report) -> Self {
        Stage2Metrics {
            auqc_cumulative: s.uplift.auqc_cumulative,
            auqc_normalized: s.uplift.auqc_normalized,
            value_gain: s.value.value_gain,
            t_star: s.value.t_star,
            interior_optimum: s.value.interior_optimum(),
            np_feasible: s.np.chosen.status == NpStatus::Feasible,
            ate_dr: s.ate_dr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub scenario: String,
    pub replicate: usize,
    pub data_seed: u64,
    pub workflow_seed: u64,
    pub proceed: bool,
    pub lrt_p: f64,
    /// Stage 2 as run by the workflow (present only past the gate).
    pub stage2: Option<Stage2Metrics>,
    /// Stage 2 run regardless of the gate, for unconditional averages.
    pub stage2_unconditional: Option<Stage2Metrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub n: usize,
    pub replicates: usize,
    pub failures: usize,
    pub proceed_rate: f64,
    pub n_proceeded: usize,
    /// Averages over gate-passing replicates.
    pub mean_auqc_cumulative: f64,
    pub mean_auqc_normalized: f64,
    pub mean_value_gain: f64,
    pub np_infeasible_rate: f64,
    pub interior_optimum_rate: f64,
    /// Averages over all replicates with Stage 2 forced; NaN when not run.
    pub uncond_mean_auqc_cumulative: f64,
    pub uncond_mean_auqc_normalized: f64,
    pub uncond_mean_value_gain: f64,
    pub uncond_np_infeasible_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudySummary {
    pub master_seed: u64,
    pub replicates: usize,
    pub unconditional: bool,
    pub scenarios: Vec<ScenarioSummary>,
    pub records: Vec<ReplicateRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudyOptions {
    /// Also run Stage 2 on every replicate, ignoring the gate.
    pub unconditional: bool,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions { unconditional: true }
    }
}

/// Seeds of replicate `r` in scenario `s`: `(data, workflow)`.
pub fn replicate_seeds(master_seed: u64, scenario: usize, replicate: usize) -> (u64, u64) {
    let (s, r) = (scenario as u64, replicate as u64);
    (
        seed::derive(master_seed, &[seed::stream::DATA, s, r]),
        seed::derive(master_seed, &[seed::stream::WORKFLOW, s, r]),
    )
}

fn run_replicate(spec: &ScenarioSpec, s: usize, r: usize, config: &WorkflowConfig, opts: StudyOptions) -> ReplicateRecord {
    let (data_seed, workflow_seed) = replicate_seeds(config.master_seed, s, r);
    let mut record = ReplicateRecord {
        scenario: spec.name.clone(),
        replicate: r,
        data_seed,
        workflow_seed,
        proceed: false,
        lrt_p: f64::NAN,
        stage2: None,
        stage2_unconditional: None,
        error: None,
    };
    let cfg = WorkflowConfig {
        master_seed: workflow_seed,
        delta: spec.delta,
        ..config.clone()
    };
    let outcome = (|| -> Result<()> {
        let (data, _) = generate_trial(spec, data_seed)?;
        let report = run_workflow(&data, &cfg)?;
        record.proceed = report.gate.proceed;
        record.lrt_p = report.stage1.lrt_p;
        record.stage2 = report.stage2.as_ref().map(Stage2Metrics::from_report);
        if opts.unconditional {
            record.stage2_unconditional = match &record.stage2 {
                Some(m) => Some(m.clone()),
                None => Some(Stage2Metrics::from_report(&run_stage2(&data, &cfg, &NoObserver, &mut Vec::new())?)),
            };
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        log::warn!("{} replicate {r} failed: {e}", spec.name);
        record.error = Some(e.to_string());
    }
    record
}

fn rate(flags: impl Iterator<Item = bool>) -> f64 {
    let (mut hit, mut total) = (0usize, 0usize);
    for f in flags {
        total += 1;
        hit += f as usize;
    }
    if total == 0 {
        f64::NAN
    } else {
        hit as f64 / total as f64
    }
}

fn summarize(spec: &ScenarioSpec, records: &[ReplicateRecord]) -> ScenarioSummary {
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let cond: Vec<&Stage2Metrics> = ok.iter().filter_map(|r| r.stage2.as_ref()).collect();
    let uncond: Vec<&Stage2Metrics> = ok.iter().filter_map(|r| r.stage2_unconditional.as_ref()).collect();
    let avg = |m: &[&Stage2Metrics], f: fn(&Stage2Metrics) -> f64| mean(&m.iter().map(|x| f(x)).collect::<Vec<_>>());
    ScenarioSummary {
        scenario: spec.name.clone(),
        n: spec.n,
        replicates: records.len(),
        failures: records.len() - ok.len(),
        proceed_rate: rate(ok.iter().map(|r| r.proceed)),
        n_proceeded: cond.len(),
        mean_auqc_cumulative: avg(&cond, |m| m.auqc_cumulative),
        mean_auqc_normalized: avg(&cond, |m| m.auqc_normalized),
        mean_value_gain: avg(&cond, |m| m.value_gain),
        np_infeasible_rate: rate(cond.iter().map(|m| !m.np_feasible)),
        interior_optimum_rate: rate(cond.iter().map(|m| m.interior_optimum)),
        uncond_mean_auqc_cumulative: avg(&uncond, |m| m.auqc_cumulative),
        uncond_mean_auqc_normalized: avg(&uncond, |m| m.auqc_normalized),
        uncond_mean_value_gain: avg(&uncond, |m| m.value_gain),
        uncond_np_infeasible_rate: rate(uncond.iter().map(|m| !m.np_feasible)),
    }
}

/// Runs `reps` replicates of every scenario. Replicates run in parallel;
/// results do not depend on the number of threads.
pub fn replicate_study(
    scenarios: &[ScenarioSpec],
    reps: usize,
    config: &WorkflowConfig,
    opts: StudyOptions,
) -> Result<StudySummary> {
    if reps == 0 {
        return Err(HteError::Config("a study needs at least one replicate".into()));
    }
    config.validate()?;
    for s in scenarios {
        s.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..scenarios.len()).flat_map(|s| (0..reps).map(move |r| (s, r))).collect();
    let records: Vec<ReplicateRecord> = jobs
        .par_iter()
        .map(|&(s, r)| run_replicate(&scenarios[s], s, r, config, opts))
        .collect();
    let summaries = scenarios
        .iter()
        .enumerate()
        .map(|(s, spec)| summarize(spec, &records[s * reps..(s + 1) * reps]))
        .collect();
    Ok(StudySummary {
        master_seed: config.master_seed,
        replicates: reps,
        unconditional: opts.unconditional,
        scenarios: summaries,
        records,
    })
}
