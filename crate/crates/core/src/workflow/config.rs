use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cate::forest::ForestSpec;
use crate::cate::learners::LearnerKind;
use crate::cate::nuisance::{PropensityMode, DEFAULT_CLIP};
use crate::dataset::actg175;
use crate::error::{HteError, Result};
use crate::stage1::GateAlphas;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteppConfig {
    pub biomarker: String,
    /// Subjects per window; `None` uses `max(50, n/10)`.
    pub window: Option<usize>,
    /// Window step; `None` uses half a window.
    pub step: Option<usize>,
    pub permutations: usize,
    pub level: f64,
}

impl Default for SteppConfig {
    fn default() -> Self {
        SteppConfig {
            biomarker: String::new(),
            window: None,
            step: None,
            permutations: 500,
            level: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkflowConfig {
    pub alpha: f64,
    /// Optional split of `alpha` between the omnibus test and the
    /// prespecified interactions.
    pub alpha_omnibus: Option<f64>,
    pub alpha_interactions: Option<f64>,
    pub delta: f64,
    pub alpha_harm: f64,
    #[serde(rename = "k")]
    pub k: usize,
    pub learner: LearnerKind,
    pub forest: ForestSpec,
    pub n_quantiles: usize,
    pub prespecified_interactions: Vec<String>,
    pub bootstrap_b: usize,
    pub master_seed: u64,
    pub capture_floor: f64,
    pub wilson_conf: f64,
    pub propensity: PropensityMode,
    pub propensity_clip: f64,
    pub uplift_grid_points: usize,
    pub stepp: Option<SteppConfig>,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        WorkflowConfig {
            alpha: 0.05,
            alpha_omnibus: None,
            alpha_interactions: None,
            delta: 0.03,
            alpha_harm: 0.10,
            k: 5,
            learner: LearnerKind::CausalForest,
            forest: ForestSpec::default(),
            n_quantiles: 19,
            prespecified_interactions: Vec::new(),
            bootstrap_b: 0,
            master_seed: 0,
            capture_floor: 0.05,
            wilson_conf: 0.95,
            propensity: PropensityMode::Randomized,
            propensity_clip: DEFAULT_CLIP,
            uplift_grid_points: 100,
            stepp: None,
        }
    }
}

impl WorkflowConfig {
    /// Defaults for the simulated trials: all three covariates are
    /// prespecified moderators.
    pub fn simulation() -> Self {
        WorkflowConfig {
            prespecified_interactions: vec!["x1".into(), "x2".into(), "x3".into()],
            ..WorkflowConfig::default()
        }
    }

    /// Defaults for the ACTG 175 analysis: zero margin, Karnofsky and
    /// baseline CD4 as moderators, STEPP along baseline CD4.
    pub fn actg175() -> Self {
        WorkflowConfig {
            delta: 0.0,
            prespecified_interactions: vec![actg175::KARNOFSKY.into(), actg175::BASELINE_CD4.into()],
            stepp: Some(SteppConfig {
                biomarker: actg175::BASELINE_CD4.into(),
                ..SteppConfig::default()
            }),
            ..WorkflowConfig::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: WorkflowConfig = toml::from_str(text).map_err(|e| HteError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HteError::io(path, e))?;
        WorkflowConfig::from_toml_str(&text).map_err(|e| e.context(format!("config file {}", path.display())))
    }

    pub fn gate_alphas(&self) -> GateAlphas {
        GateAlphas {
            omnibus: self.alpha_omnibus.unwrap_or(self.alpha),
            interactions: self.alpha_interactions.unwrap_or(self.alpha),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(HteError::Config(format!("{name} = {v} is not in (0,1)")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("alpha_harm", self.alpha_harm)?;
        unit("wilson_conf", self.wilson_conf)?;
        let alphas = self.gate_alphas();
        unit("alpha_omnibus", alphas.omnibus)?;
        unit("alpha_interactions", alphas.interactions)?;
        if self.alpha_omnibus.is_some() != self.alpha_interactions.is_some() {
            return Err(HteError::Config(
                "alpha_omnibus and alpha_interactions must be given together".into(),
            ));
        }
        if self.alpha_omnibus.is_some() && alphas.omnibus + alphas.interactions > self.alpha + 1e-12 {
            return Err(HteError::Config(format!(
                "alpha split {} + {} exceeds alpha = {}",
                alphas.omnibus, alphas.interactions, self.alpha
            )));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(HteError::Config(format!("delta = {} must be >= 0", self.delta)));
        }
        if self.k < 2 {
            return Err(HteError::Config(format!("K = {} must be at least 2", self.k)));
        }
        if self.n_quantiles == 0 {
            return Err(HteError::Config("n_quantiles must be at least 1".into()));
        }
        if self.bootstrap_b != 0 && self.bootstrap_b < crate::policy::bootstrap::MIN_REPLICATES {
            return Err(HteError::Config(format!(
                "bootstrap_b = {} must be 0 (off) or at least {}",
                self.bootstrap_b,
                crate::policy::bootstrap::MIN_REPLICATES
            )));
        }
        if !(0.0..=1.0).contains(&self.capture_floor) {
            return Err(HteError::Config(format!("capture_floor = {} is not in [0,1]", self.capture_floor)));
        }
        if !(self.propensity_clip > 0.0 && self.propensity_clip < 0.5) {
            return Err(HteError::Config(format!(
                "propensity_clip = {} is not in (0, 0.5)",
                self.propensity_clip
            )));
        }
        if self.uplift_grid_points < 2 {
            return Err(HteError::Config("uplift_grid_points must be at least 2".into()));
        }
        if let Some(s) = &self.stepp {
            if s.biomarker.is_empty() {
                return Err(HteError::Config("stepp.biomarker is empty".into()));
            }
            unit("stepp.level", s.level)?;
        }
        self.forest.validate()
    }
}
