//! Randomized-trial generator for the No / Weak / Strong HTE scenarios.
//!
//! Baseline log odds `eta0(x) = b0 + b·x`; treatment adds
//! `gamma0 + gamma1 * x1` on the log-odds scale. The ground-truth effect is
//! the risk difference `sigmoid(eta0 + gamma0 + gamma1 x1) - sigmoid(eta0)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnKind, TrialDataset};
use crate::error::{HteError, Result};
use crate::seed;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    NoHte,
    WeakHte,
    StrongHte,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::NoHte, Scenario::WeakHte, Scenario::StrongHte];

    pub fn label(self) -> &'static str {
        match self {
            Scenario::NoHte => "no",
            Scenario::WeakHte => "weak",
            Scenario::StrongHte => "strong",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "no" | "nohte" | "none" => Ok(Scenario::NoHte),
            "weak" | "weakhte" => Ok(Scenario::WeakHte),
            "strong" | "stronghte" => Ok(Scenario::StrongHte),
            other => Err(HteError::Config(format!("unknown scenario `{other}` (expected no|weak|strong)"))),
        }
    }
}

/// Parameters of the logistic data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub beta0: f64,
    pub beta: [f64; 3],
    pub gamma0: f64,
    pub gamma1: f64,
    pub n: usize,
    pub delta: f64,
}

impl ScenarioSpec {
    pub const BETA0: f64 = -0.6;
    pub const BETA: [f64; 3] = [0.6, -0.2, 0.3];
    pub const DEFAULT_N: usize = 2000;
    pub const DEFAULT_DELTA: f64 = 0.03;

    pub fn preset(scenario: Scenario) -> Self {
        let (gamma0, gamma1) = match scenario {
            Scenario::NoHte => (0.4, 0.0),
            Scenario::WeakHte => (-0.05, 0.3),
            Scenario::StrongHte => (-0.05, 1.0),
        };
        ScenarioSpec {
            name: scenario.label().to_string(),
            beta0: Self::BETA0,
            beta: Self::BETA,
            gamma0,
            gamma1,
            n: Self::DEFAULT_N,
            delta: Self::DEFAULT_DELTA,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(HteError::Config(format!("scenario n must be at least 2, got {}", self.n)));
        }
        if !(self.delta >= 0.0) {
            return Err(HteError::Config(format!("margin delta must be >= 0, got {}", self.delta)));
        }
        Ok(())
    }

    pub fn baseline_logit(&self, x: &[f64; 3]) -> f64 {
        self.beta0 + self.beta[0] * x[0] + self.beta[1] * x[1] + self.beta[2] * x[2]
    }

    /// Treatment increment on the log-odds scale.
    pub fn log_odds_increment(&self, x: &[f64; 3]) -> f64 {
        self.gamma0 + self.gamma1 * x[0]
    }
}

/// Risk-difference CATE at `x`.
pub fn true_cate(spec: &ScenarioSpec, x: &[f64; 3]) -> f64 {
    let eta0 = spec.baseline_logit(x);
    sigmoid(eta0 + spec.log_odds_increment(x)) - sigmoid(eta0)
}

/// Latent benefit label: 1 iff the CATE strictly exceeds the margin.
pub fn benefit_label(spec: &ScenarioSpec, x: &[f64; 3]) -> u8 {
    u8::from(true_cate(spec, x) > spec.delta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub tau: Vec<f64>,
    pub z: Vec<u8>,
}

fn draw_covariates<R: Rng>(rng: &mut R) -> [f64; 3] {
    let x1: f64 = StandardNormal.sample(rng);
    let x2: f64 = StandardNormal.sample(rng);
    let x3 = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
    [x1, x2, x3]
}

/// One replicate: `X1, X2 ~ N(0,1)`, `X3 ~ Bernoulli(0.5)`, `A ~ Bernoulli(0.5)`
/// independent of `X`, then `Y ~ Bernoulli(sigmoid(eta0 + A * increment))`.
pub fn generate_trial(spec: &ScenarioSpec, seed: u64) -> Result<(TrialDataset, GroundTruth)> {
    spec.validate()?;
    let mut rng = seed::rng(seed);
    let n = spec.n;
    let mut cols = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut treatment = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        let x = draw_covariates(&mut rng);
        let a = u8::from(rng.random_bool(0.5));
        let eta0 = spec.baseline_logit(&x);
        let p = sigmoid(eta0 + f64::from(a) * spec.log_odds_increment(&x));
        let y = u8::from(rng.random::<f64>() < p);
        let t = true_cate(spec, &x);
        for (c, v) in cols.iter_mut().zip(x) {
            c.push(v);
        }
        treatment.push(a);
        outcome.push(y);
        tau.push(t);
        z.push(u8::from(t > spec.delta));
    }
    let data = TrialDataset::with_kinds(
        vec!["x1".into(), "x2".into(), "x3".into()],
        vec![ColumnKind::Continuous, ColumnKind::Continuous, ColumnKind::Binary],
        cols.into(),
        treatment,
        outcome,
    )?
    .with_known_propensity(0.5)?;
    Ok((data, GroundTruth { tau, z }))
}

/// Monte-Carlo average of the true CATE over the covariate law.
pub fn monte_carlo_ate(spec: &ScenarioSpec, draws: usize, seed: u64) -> f64 {
    let mut rng = seed::rng(seed);
    let mut sum = 0.0;
    for _ in 0..draws {
        sum += true_cate(spec, &draw_covariates(&mut rng));
    }
    sum / draws as f64
}

/// Writes `tau,z` one row per subject.
pub fn write_ground_truth(truth: &GroundTruth, path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HteError::io(path, e.into()))?;
    w.write_record(["tau", "z"]).map_err(|e| HteError::io(path, e.into()))?;
    for (t, z) in truth.tau.iter().zip(&truth.z) {
        w.write_record([t.to_string(), z.to_string()])
            .map_err(|e| HteError::io(path, e.into()))?;
    }
    w.flush().map_err(|e| HteError::io(path, e))
}
