use serde::Serialize;

use crate::cate::nuisance::NuisanceEstimates;
use crate::dataset::TrialDataset;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Flavor {
    #[serde(rename = "DR")]
    Dr,
    #[serde(rename = "IPW")]
    Ipw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOutcomes {
    pub values: Vec<f64>,
    pub flavor: Flavor,
}

impl PseudoOutcomes {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        crate::stats::mean(&self.values)
    }
}

/// `mu1 - mu0 + A (Y - mu1) / e - (1 - A)(Y - mu0) / (1 - e)`.
pub fn pseudo_dr(data: &TrialDataset, nuisance: &NuisanceEstimates) -> Result<PseudoOutcomes> {
    nuisance.check_aligned(data.n())?;
    let values = (0..data.n())
        .map(|i| {
            let y = f64::from(data.outcome()[i]);
            let (m0, m1, e) = (nuisance.mu0_hat[i], nuisance.mu1_hat[i], nuisance.e_hat[i]);
            if data.treatment()[i] == 1 {
                m1 - m0 + (y - m1) / e
            } else {
                m1 - m0 - (y - m0) / (1.0 - e)
            }
        })
        .collect();
    Ok(PseudoOutcomes {
        values,
        flavor: Flavor::Dr,
    })
}

/// `A Y / e - (1 - A) Y / (1 - e)`.
pub fn pseudo_ipw(data: &TrialDataset, nuisance: &NuisanceEstimates) -> Result<PseudoOutcomes> {
    nuisance.check_aligned(data.n())?;
    let values = (0..data.n())
        .map(|i| {
            let y = f64::from(data.outcome()[i]);
            let e = nuisance.e_hat[i];
            if data.treatment()[i] == 1 {
                y / e
            } else {
                -y / (1.0 - e)
            }
        })
        .collect();
    Ok(PseudoOutcomes {
        values,
        flavor: Flavor::Ipw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::make_folds;
    use std::sync::Arc;

    fn four() -> TrialDataset {
        TrialDataset::new(
            vec!["x".into()],
            vec![vec![0.1, 0.2, 0.3, 0.4]],
            vec![1, 0, 1, 0],
            vec![1, 1, 0, 0],
        )
        .unwrap()
    }

    fn nuisance(d: &TrialDataset, e: f64, mu0: Vec<f64>, mu1: Vec<f64>) -> NuisanceEstimates {
        NuisanceEstimates {
            e_hat: vec![e; d.n()],
            mu0_hat: mu0,
            mu1_hat: mu1,
            folds: Arc::new(make_folds(d, 2, 0).unwrap()),
            clip: 0.01,
        }
    }

    #[test]
    fn substitution() {
        let d = four();
        let nu = nuisance(&d, 0.5, vec![0.0; 4], vec![0.0; 4]);
        assert_eq!(pseudo_dr(&d, &nu).unwrap().values, vec![2.0, -2.0, 0.0, 0.0]);
        assert_eq!(pseudo_ipw(&d, &nu).unwrap().values, vec![2.0, -2.0, 0.0, 0.0]);
    }

    #[test]
    fn perfect_outcome_models_give_the_contrast() {
        let d = four();
        let mu0 = vec![0.3, 1.0, 0.2, 0.0];
        let mu1 = vec![1.0, 0.6, 0.0, 0.9];
        let nu = nuisance(&d, 0.37, mu0.clone(), mu1.clone());
        let dr = pseudo_dr(&d, &nu).unwrap();
        for i in 0..4 {
            assert!((dr.values[i] - (mu1[i] - mu0[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn misaligned_nuisance_is_rejected() {
        let d = four();
        let mut nu = nuisance(&d, 0.5, vec![0.0; 4], vec![0.0; 4]);
        nu.e_hat.pop();
        assert!(pseudo_dr(&d, &nu).is_err());
    }
}
