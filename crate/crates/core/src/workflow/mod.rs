//! Orchestration: Stage 1, the gate, Stage 2, the simulation study, the
//! ACTG 175 pipeline and report files.

pub mod config;
pub mod report;
pub mod run;
pub mod study;

pub use config::{SteppConfig, WorkflowConfig};
pub use report::{default_formats, emit_report, emit_stage1, emit_stage2, emit_study, fmt_num, round_sig, to_json, Format};
pub use run::{
    run_actg175, run_stage2, run_stepp, run_workflow, run_workflow_observed, DecisionRecord, NoObserver, Observer, Stage2Report,
    WorkflowReport,
};
pub use study::{replicate_seeds, replicate_study, ReplicateRecord, ScenarioSummary, Stage2Metrics, StudyOptions, StudySummary};
