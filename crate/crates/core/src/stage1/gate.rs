use serde::{Deserialize, Serialize};

use crate::error::{HteError, Result};
use crate::stage1::interaction::{InteractionTest, LrtResult};

/// Which gate criterion fired.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "criterion", rename_all = "snake_case")]
pub enum GateReason {
    /// (i) global heterogeneity: the omnibus LRT rejected.
    Omnibus { p: f64 },
    /// (iii) a prespecified interaction survived multiplicity adjustment.
    PrespecifiedInteraction { name: String, holm_p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateDecision {
    pub proceed: bool,
    pub reasons: Vec<GateReason>,
}

/// Significance levels for the two gate criteria. Both default to the
/// shared `alpha`; splitting them is optional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateAlphas {
    pub omnibus: f64,
    pub interactions: f64,
}

impl GateAlphas {
    pub fn shared(alpha: f64) -> Self {
        GateAlphas {
            omnibus: alpha,
            interactions: alpha,
        }
    }
}

pub fn gate_decision(lrt: &LrtResult, interactions: &[InteractionTest], alpha: f64) -> Result<GateDecision> {
    gate_decision_split(lrt, interactions, GateAlphas::shared(alpha))
}

pub fn gate_decision_split(lrt: &LrtResult, interactions: &[InteractionTest], alphas: GateAlphas) -> Result<GateDecision> {
    for a in [alphas.omnibus, alphas.interactions] {
        if !(a > 0.0 && a < 1.0) {
            return Err(HteError::Config(format!("alpha {a} is not in (0,1)")));
        }
    }
    let mut reasons = Vec::new();
    if lrt.df > 0 && lrt.p < alphas.omnibus {
        reasons.push(GateReason::Omnibus { p: lrt.p });
    }
    for t in interactions {
        if t.holm_p < alphas.interactions {
            reasons.push(GateReason::PrespecifiedInteraction {
                name: t.name.clone(),
                holm_p: t.holm_p,
            });
        }
    }
    Ok(GateDecision {
        proceed: !reasons.is_empty(),
        reasons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn term(name: &str, holm_p: f64) -> InteractionTest {
        InteractionTest {
            name: name.into(),
            estimate: 0.0,
            std_error: 1.0,
            wald_z: 0.0,
            raw_p: holm_p,
            holm_p,
        }
    }

    fn lrt(p: f64) -> LrtResult {
        LrtResult { stat: 1.0, df: 3, p }
    }

    #[test]
    fn omnibus_fires() {
        let g = gate_decision(&lrt(0.002), &[term("cd40", 0.3)], 0.05).unwrap();
        assert!(g.proceed);
        assert_eq!(g.reasons, vec![GateReason::Omnibus { p: 0.002 }]);
    }

    #[test]
    fn nothing_significant_stops() {
        let g = gate_decision(&lrt(0.5), &[term("a", 0.5), term("b", 0.5)], 0.05).unwrap();
        assert!(!g.proceed);
        assert!(g.reasons.is_empty());
    }

    #[test]
    fn interaction_alone_fires() {
        let g = gate_decision(&lrt(0.2), &[term("karnof", 0.015), term("cd40", 0.4)], 0.05).unwrap();
        assert!(g.proceed);
        assert_eq!(
            g.reasons,
            vec![GateReason::PrespecifiedInteraction {
                name: "karnof".into(),
                holm_p: 0.015
            }]
        );
    }

    #[test]
    fn invalid_alpha() {
        assert!(gate_decision(&lrt(0.2), &[], 1.0).is_err());
        assert!(gate_decision(&lrt(0.2), &[], 0.0).is_err());
    }
}
