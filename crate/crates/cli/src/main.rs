use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use hte_core::dataset::{dataset_from_raw, read_raw_table, write_table, ColumnSchema};
use hte_core::simgen::{generate_trial, write_ground_truth};
use hte_core::stage1::run_stage1;
use hte_core::workflow::{
    emit_report, emit_stage1, emit_stage2, emit_study, fmt_num, replicate_seeds, replicate_study, run_actg175,
    run_stage2, run_stepp, run_workflow, Format, NoObserver, SteppConfig, StudyOptions, WorkflowReport,
};
use hte_core::{HteError, LearnerKind, Result, Scenario, ScenarioSpec, TrialDataset, WorkflowConfig};

mod settings;

#[derive(Parser)]
#[command(name = "hte", version, about = "Two-stage heterogeneous treatment effect analysis for randomized trials")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate simulated trial replicates with their true effects.
    Simulate(SimulateArgs),
    /// Interaction tests, optional STEPP and the gate decision.
    Stage1(Stage1Args),
    /// Cross-fitted scores, uplift, policy value and the NP rule (no gate).
    Stage2(Stage2Args),
    /// Full workflow on a data file or a freshly simulated trial.
    Run(RunArgs),
    /// Multi-replicate simulation study over the preset scenarios.
    Study(StudyArgs),
    /// Preprocess the raw ACTG 175 table and run the full workflow.
    Actg175(ActgArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    No,
    Weak,
    Strong,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::No => Scenario::NoHte,
            ScenarioArg::Weak => Scenario::WeakHte,
            ScenarioArg::Strong => Scenario::StrongHte,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    #[arg(long, default_value_t = ScenarioSpec::DEFAULT_N)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Where the trial table lives and which columns play which role.
#[derive(Args)]
struct InputArgs {
    /// Comma-separated table with a header row.
    #[arg(long)]
    input: PathBuf,
    /// TOML file with `covariates`, `treatment` and `outcome`. Without it
    /// every column other than the treatment and outcome is a covariate.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value = "a")]
    treatment: String,
    #[arg(long, default_value = "y")]
    outcome: String,
}

/// Settings shared by the analysis commands. Values from `--config` take
/// precedence over these flags.
#[derive(Args)]
struct Tuning {
    /// TOML workflow configuration; its keys override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Prespecified interaction covariates, comma separated.
    #[arg(long, value_delimiter = ',')]
    interactions: Option<Vec<String>>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    alpha_harm: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// causal_forest, s, t or x.
    #[arg(long)]
    learner: Option<String>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    n_quantiles: Option<usize>,
    /// Bootstrap replicates for standard errors (0 = off).
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stepp_biomarker: Option<String>,
    /// Output formats, comma separated (json, csv, tsv).
    #[arg(long, value_delimiter = ',', default_value = "json,csv")]
    format: Vec<String>,
}

impl Tuning {
    fn apply(&self, mut c: WorkflowConfig) -> Result<WorkflowConfig> {
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = &self.interactions {
            c.prespecified_interactions = v.iter().filter(|s| !s.is_empty()).cloned().collect();
        }
        if let Some(v) = self.delta {
            c.delta = v;
        }
        if let Some(v) = self.alpha_harm {
            c.alpha_harm = v;
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = &self.learner {
            c.learner = LearnerKind::parse(v)?;
        }
        if let Some(v) = self.trees {
            c.forest.n_trees = v;
        }
        if let Some(v) = self.n_quantiles {
            c.n_quantiles = v;
        }
        if let Some(v) = self.bootstrap {
            c.bootstrap_b = v;
        }
        if let Some(v) = self.seed {
            c.master_seed = v;
        }
        if let Some(v) = &self.stepp_biomarker {
            c.stepp = Some(SteppConfig {
                biomarker: v.clone(),
                ..c.stepp.unwrap_or_default()
            });
        }
        settings::overlay_file(c, self.config.as_deref())
    }

    fn formats(&self) -> Result<BTreeSet<Format>> {
        self.format.iter().map(|f| Format::parse(f)).collect()
    }
}

#[derive(Args)]
struct Stage1Args {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Stage2Args {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Comma-separated table; omit to simulate with --scenario.
    #[arg(long, required_unless_present = "scenario", conflicts_with = "scenario")]
    input: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value = "a")]
    treatment: String,
    #[arg(long, default_value = "y")]
    outcome: String,
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    /// Sample size of the simulated trial.
    #[arg(long, default_value_t = ScenarioSpec::DEFAULT_N)]
    n: usize,
    /// Seed of the simulated trial.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Scenarios to run, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "no,weak,strong")]
    scenarios: Vec<ScenarioArg>,
    #[arg(long, default_value_t = ScenarioSpec::DEFAULT_N)]
    n: usize,
    /// Skip the extra Stage 2 run on replicates that stop at the gate.
    #[arg(long)]
    conditional_only: bool,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ActgArgs {
    /// Raw ACTG 175 table (comma separated, original column names).
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long)]
    out: PathBuf,
}

fn load(args: &InputArgs) -> Result<TrialDataset> {
    let raw = read_raw_table(&args.input)?;
    let schema = match &args.schema {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| HteError::io(p, e))?;
            toml::from_str::<ColumnSchema>(&text).map_err(|e| HteError::Schema(format!("{}: {e}", p.display())))?
        }
        None => {
            let covariates = raw
                .headers
                .iter()
                .filter(|h| **h != args.treatment && **h != args.outcome)
                .cloned()
                .collect();
            ColumnSchema::new(covariates, args.treatment.clone(), args.outcome.clone())?
        }
    };
    schema.validate()?;
    let data = dataset_from_raw(&raw, &schema)?;
    info!("loaded {} subjects, {} covariates from {}", data.n(), data.p(), args.input.display());
    Ok(data)
}

fn print_written(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}

fn print_narrative(report: &WorkflowReport) {
    for r in &report.narrative {
        println!("[{}/{}] {}", r.stage, r.step, r.detail);
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let scenario = Scenario::from(args.scenario);
    let spec = ScenarioSpec::preset(scenario).with_n(args.n);
    if args.reps == 0 {
        return Err(HteError::Config("--reps must be at least 1".into()));
    }
    std::fs::create_dir_all(&args.out).map_err(|e| HteError::io(&args.out, e))?;
    let s = Scenario::ALL.iter().position(|x| *x == scenario).unwrap();
    for r in 0..args.reps {
        let (data_seed, _) = replicate_seeds(args.seed, s, r);
        let (data, truth) = generate_trial(&spec, data_seed)?;
        let stem = format!("{}_{:03}", scenario.label(), r);
        let trial = args.out.join(format!("trial_{stem}.csv"));
        let truth_path = args.out.join(format!("truth_{stem}.csv"));
        write_table(&data, &trial)?;
        write_ground_truth(&truth, &truth_path)?;
        print_written(&[trial, truth_path]);
    }
    Ok(())
}

fn stage1(args: Stage1Args) -> Result<()> {
    let data = load(&args.input)?;
    let config = args.tuning.apply(WorkflowConfig::default())?;
    let report = run_stage1(&data, &config.prespecified_interactions, config.gate_alphas())?;
    let stepp = match &config.stepp {
        Some(sc) => Some(run_stepp(&data, sc, config.master_seed)?),
        None => None,
    };
    println!(
        "omnibus LRT: chi2 = {}, df = {}, p = {}",
        fmt_num(report.lrt_stat),
        report.lrt_df,
        fmt_num(report.lrt_p)
    );
    for t in &report.interactions {
        println!("{}: estimate {}, Holm p = {}", t.name, fmt_num(t.estimate), fmt_num(t.holm_p));
    }
    println!("gate: {}", if report.proceed { "proceed" } else { "stop" });
    print_written(&emit_stage1(&report, stepp.as_ref(), &args.out, &args.tuning.formats()?)?);
    Ok(())
}

fn stage2(args: Stage2Args) -> Result<()> {
    let data = load(&args.input)?;
    let config = args.tuning.apply(WorkflowConfig::default())?;
    let mut narrative = Vec::new();
    let s2 = run_stage2(&data, &config, &NoObserver, &mut narrative)?;
    for r in &narrative {
        println!("[{}/{}] {}", r.stage, r.step, r.detail);
    }
    print_written(&emit_stage2(&s2, &args.out, &args.tuning.formats()?)?);
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let (data, base) = match (&args.input, args.scenario) {
        (Some(input), _) => {
            let data = load(&InputArgs {
                input: input.clone(),
                schema: args.schema.clone(),
                treatment: args.treatment.clone(),
                outcome: args.outcome.clone(),
            })?;
            (data, WorkflowConfig::default())
        }
        (None, Some(sc)) => {
            let spec = ScenarioSpec::preset(sc.into()).with_n(args.n);
            let base = WorkflowConfig {
                delta: spec.delta,
                ..WorkflowConfig::simulation()
            };
            (generate_trial(&spec, args.data_seed)?.0, base)
        }
        (None, None) => unreachable!("clap requires --input or --scenario"),
    };
    let config = args.tuning.apply(base)?;
    let report = run_workflow(&data, &config)?;
    print_narrative(&report);
    print_written(&emit_report(&report, &args.out, &args.tuning.formats()?)?);
    Ok(())
}

fn study(args: StudyArgs) -> Result<()> {
    let config = args.tuning.apply(WorkflowConfig::simulation())?;
    let scenarios: Vec<ScenarioSpec> = args
        .scenarios
        .iter()
        .map(|&s| ScenarioSpec::preset(s.into()).with_n(args.n))
        .collect();
    let opts = StudyOptions {
        unconditional: !args.conditional_only,
    };
    let started = std::time::Instant::now();
    let summary = replicate_study(&scenarios, args.reps, &config, opts)?;
    info!("study finished in {:.1} s", started.elapsed().as_secs_f64());
    println!("scenario  proceed  mean_dV    mean_AUQC  np_infeasible  (gate-passing replicates)");
    for s in &summary.scenarios {
        println!(
            "{:<9} {:<8} {:<10} {:<10} {}",
            s.scenario,
            fmt_num(s.proceed_rate),
            fmt_num(s.mean_value_gain),
            fmt_num(s.mean_auqc_cumulative),
            fmt_num(s.np_infeasible_rate)
        );
    }
    print_written(&emit_study(&summary, &args.out, &args.tuning.formats()?)?);
    Ok(())
}

fn actg(args: ActgArgs) -> Result<()> {
    let config = args.tuning.apply(WorkflowConfig::actg175())?;
    let report = run_actg175(&args.input, &config)?;
    print_narrative(&report);
    print_written(&emit_report(&report, &args.out, &args.tuning.formats()?)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Stage1(a) => stage1(a),
        Command::Stage2(a) => stage2(a),
        Command::Run(a) => run(a),
        Command::Study(a) => study(a),
        Command::Actg175(a) => actg(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
