//! Harm-constrained (Neyman-Pearson) threshold selection on DR surrogates.

use serde::Serialize;

use crate::cate::pseudo::PseudoOutcomes;
use crate::error::{HteError, Result};
use crate::stage1::dist::normal_quantile;

pub const DEFAULT_CAPTURE_FLOOR: f64 = 0.05;
pub const DEFAULT_WILSON_CONF: f64 = 0.95;

/// One-sided Wilson score upper bound for `successes / trials`.
pub fn wilson_upper(successes: usize, trials: usize, conf: f64) -> Result<f64> {
    if trials == 0 || successes > trials {
        return Err(HteError::Domain(format!(
            "Wilson bound needs 0 <= successes <= trials and trials >= 1, got {successes}/{trials}"
        )));
    }
    if !(conf > 0.0 && conf < 1.0) {
        return Err(HteError::Domain(format!("confidence {conf} is not in (0,1)")));
    }
    if successes == trials {
        return Ok(1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = normal_quantile(conf);
    let z2 = z * z;
    let centre = p + z2 / (2.0 * n);
    let spread = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Ok(((centre + spread) / (1.0 + z2 / n)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NpStatus {
    Feasible,
    BestAttainable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NpChoice {
    #[serde(serialize_with = "crate::serde_float::scalar")]
    pub threshold: f64,
    pub index: usize,
    pub status: NpStatus,
    pub harm_rate: f64,
    pub harm_upper: f64,
    pub benefit_capture: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NpFrontier {
    #[serde(serialize_with = "crate::serde_float::vec")]
    pub thresholds: Vec<f64>,
    pub n_treated: Vec<usize>,
    /// NaN where nobody is treated.
    pub harm_rate: Vec<f64>,
    pub harm_upper: Vec<f64>,
    /// Treated benefiters over all benefiters.
    pub benefit_capture: Vec<f64>,
    /// Treated benefiters over treated subjects.
    pub benefit_among_treated: Vec<f64>,
    pub feasible: Vec<bool>,
    pub chosen: NpChoice,
    pub alpha_harm: f64,
    pub delta: f64,
    pub conf_level: f64,
    pub capture_floor: f64,
}

impl NpFrontier {
    /// Harm rates at thresholds that treat at least one subject.
    pub fn defined_harm_rates(&self) -> impl Iterator<Item = f64> + '_ {
        self.harm_rate.iter().copied().filter(|h| h.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NpOptions {
    pub delta: f64,
    pub alpha_harm: f64,
    pub conf: f64,
    pub capture_floor: f64,
}

impl Default for NpOptions {
    fn default() -> Self {
        NpOptions {
            delta: 0.03,
            alpha_harm: 0.10,
            conf: DEFAULT_WILSON_CONF,
            capture_floor: DEFAULT_CAPTURE_FLOOR,
        }
    }
}

/// Later (larger-threshold) index wins ties.
fn pick(candidates: impl Iterator<Item = usize>, better: impl Fn(usize, usize) -> bool) -> Option<usize> {
    candidates.fold(None, |best, j| match best {
        Some(b) if better(b, j) => Some(b),
        _ => Some(j),
    })
}

pub fn np_frontier(scores: &[f64], pseudo: &PseudoOutcomes, thresholds: &[f64], opts: NpOptions) -> Result<NpFrontier> {
    if pseudo.len() != scores.len() {
        return Err(HteError::Alignment {
            what: "pseudo-outcomes",
            expected: scores.len(),
            actual: pseudo.len(),
        });
    }
    if !(opts.alpha_harm > 0.0 && opts.alpha_harm < 1.0) {
        return Err(HteError::Domain(format!("alpha_harm {} is not in (0,1)", opts.alpha_harm)));
    }
    if thresholds.is_empty() {
        return Err(HteError::Config("NP frontier needs at least one threshold".into()));
    }
    let benefiters = pseudo.values.iter().filter(|&&v| v > opts.delta).count();
    if benefiters == 0 {
        return Err(HteError::DegenerateBenefit);
    }
    let m = thresholds.len();
    let mut f = NpFrontier {
        thresholds: thresholds.to_vec(),
        n_treated: Vec::with_capacity(m),
        harm_rate: Vec::with_capacity(m),
        harm_upper: Vec::with_capacity(m),
        benefit_capture: Vec::with_capacity(m),
        benefit_among_treated: Vec::with_capacity(m),
        feasible: Vec::with_capacity(m),
        chosen: NpChoice {
            threshold: f64::NAN,
            index: 0,
            status: NpStatus::BestAttainable,
            harm_rate: f64::NAN,
            harm_upper: f64::NAN,
            benefit_capture: f64::NAN,
        },
        alpha_harm: opts.alpha_harm,
        delta: opts.delta,
        conf_level: opts.conf,
        capture_floor: opts.capture_floor,
    };
    for &t in thresholds {
        let (mut treated, mut harmed) = (0usize, 0usize);
        for (s, v) in scores.iter().zip(&pseudo.values) {
            if *s > t {
                treated += 1;
                if *v <= opts.delta {
                    harmed += 1;
                }
            }
        }
        let helped = treated - harmed;
        f.n_treated.push(treated);
        f.benefit_capture.push(helped as f64 / benefiters as f64);
        if treated == 0 {
            f.harm_rate.push(f64::NAN);
            f.harm_upper.push(f64::NAN);
            f.benefit_among_treated.push(f64::NAN);
            f.feasible.push(false);
        } else {
            let upper = wilson_upper(harmed, treated, opts.conf)?;
            f.harm_rate.push(harmed as f64 / treated as f64);
            f.harm_upper.push(upper);
            f.benefit_among_treated.push(helped as f64 / treated as f64);
            f.feasible.push(upper <= opts.alpha_harm);
        }
    }
    let feasible = pick((0..m).filter(|&j| f.feasible[j]), |b, j| f.benefit_capture[b] > f.benefit_capture[j]);
    let (index, status) = match feasible {
        Some(j) => (j, NpStatus::Feasible),
        None => {
            let defined = |j: &usize| f.n_treated[*j] > 0;
            let best = pick(
                (0..m).filter(defined).filter(|&j| f.benefit_capture[j] >= opts.capture_floor),
                |b, j| f.harm_rate[b] < f.harm_rate[j],
            )
            .or_else(|| pick((0..m).filter(defined), |b, j| f.harm_rate[b] < f.harm_rate[j]))
            .ok_or_else(|| HteError::Infeasible("no threshold treats any subject".into()))?;
            (best, NpStatus::BestAttainable)
        }
    };
    f.chosen = NpChoice {
        threshold: thresholds[index],
        index,
        status,
        harm_rate: f.harm_rate[index],
        harm_upper: f.harm_upper[index],
        benefit_capture: f.benefit_capture[index],
    };
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cate::pseudo::Flavor;

    fn dr(values: Vec<f64>) -> PseudoOutcomes {
        PseudoOutcomes { values, flavor: Flavor::Dr }
    }

    #[test]
    fn wilson_closed_form() {
        let z: f64 = 1.6448536269514722;
        let expect = (z * z / 10.0) / (1.0 + z * z / 10.0);
        let u = wilson_upper(0, 10, 0.95).unwrap();
        assert!((u - expect).abs() < 1e-12);
        assert!((u - 0.213).abs() < 1e-3);
        assert_eq!(wilson_upper(7, 7, 0.9).unwrap(), 1.0);
        assert!(wilson_upper(3, 2, 0.95).is_err());
        assert!(wilson_upper(0, 0, 0.95).is_err());
        assert!(wilson_upper(1, 2, 1.0).is_err());
    }

    #[test]
    fn wilson_monotone_in_successes() {
        for n in 1..=50 {
            let mut prev = 0.0;
            for s in 0..=n {
                let u = wilson_upper(s, n, 0.95).unwrap();
                assert!(u >= prev && (0.0..=1.0).contains(&u));
                prev = u;
            }
        }
    }

    #[test]
    fn all_benefiters_can_still_be_infeasible() {
        let scores: Vec<f64> = (0..10).map(f64::from).collect();
        let f = np_frontier(&scores, &dr(vec![1.0; 10]), &[f64::NEG_INFINITY, f64::INFINITY], NpOptions::default()).unwrap();
        assert_eq!(f.harm_rate[0], 0.0);
        assert!(f.harm_upper[0] > 0.10);
        assert_eq!(f.chosen.status, NpStatus::BestAttainable);
        assert_eq!(f.chosen.threshold, f64::NEG_INFINITY);
        assert_eq!(f.benefit_capture, vec![1.0, 0.0]);
        assert!(f.harm_rate[1].is_nan() && !f.feasible[1]);
    }

    #[test]
    fn feasible_choice_maximizes_capture() {
        // top 100 scores are all benefiters, the rest are all harmed
        let n = 300;
        let scores: Vec<f64> = (0..n).map(|i| -(i as f64)).collect();
        let values = (0..n).map(|i| if i < 100 { 1.0 } else { -1.0 }).collect();
        let thresholds = [f64::NEG_INFINITY, -200.5, -99.5, -49.5, f64::INFINITY];
        let f = np_frontier(&scores, &dr(values), &thresholds, NpOptions::default()).unwrap();
        assert_eq!(f.feasible, vec![false, false, true, true, false]);
        assert_eq!(f.chosen.status, NpStatus::Feasible);
        assert_eq!(f.chosen.threshold, -99.5);
        assert_eq!(f.chosen.benefit_capture, 1.0);
        assert!(f.benefit_capture.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn best_attainable_respects_the_capture_floor() {
        let scores: Vec<f64> = (0..40).map(|i| -(i as f64)).collect();
        let values: Vec<f64> = (0..40).map(|i| if i == 0 || i % 2 == 1 { 1.0 } else { -1.0 }).collect();
        let thresholds = [f64::NEG_INFINITY, -0.5, f64::INFINITY];
        let opts = NpOptions {
            capture_floor: 0.5,
            ..NpOptions::default()
        };
        let f = np_frontier(&scores, &dr(values), &thresholds, opts).unwrap();
        // treating only the first subject has zero harm but capture 1/21
        assert_eq!(f.harm_rate[1], 0.0);
        assert_eq!(f.chosen.threshold, f64::NEG_INFINITY);
    }

    #[test]
    fn no_benefiters_is_degenerate() {
        assert!(matches!(
            np_frontier(&[0.1, 0.2], &dr(vec![0.0, -1.0]), &[f64::NEG_INFINITY], NpOptions::default()),
            Err(HteError::DegenerateBenefit)
        ));
    }
}
