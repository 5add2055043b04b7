//! Reference distributions used by the tests.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{HteError, Result};

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Upper tail `P(chi2_df > x)`, i.e. the regularized upper incomplete gamma
/// function `Q(df/2, x/2)`.
pub fn chisq_sf(x: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(HteError::Domain("chi-square degrees of freedom must be >= 1".into()));
    }
    if !(x >= 0.0) {
        return Err(HteError::Domain(format!("chi-square statistic must be >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    let dist = ChiSquared::new(df as f64).map_err(|e| HteError::Domain(e.to_string()))?;
    Ok(dist.sf(x).clamp(0.0, 1.0))
}

/// `P(Z > z)` for a standard normal `Z`.
pub fn normal_sf(z: f64) -> f64 {
    standard_normal().sf(z)
}

/// Two-sided p-value of a standard normal statistic.
pub fn two_sided_p(z: f64) -> f64 {
    (2.0 * normal_sf(z.abs())).min(1.0)
}

pub fn normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chisq_edges() {
        assert_eq!(chisq_sf(0.0, 1).unwrap(), 1.0);
        assert_eq!(chisq_sf(0.0, 16).unwrap(), 1.0);
        assert!(chisq_sf(1.0, 0).is_err());
        assert!(chisq_sf(-1.0, 2).is_err());
    }

    #[test]
    fn chisq_two_df_is_exponential() {
        for x in [0.1, 1.0, 5.0, 20.0] {
            assert!((chisq_sf(x, 2).unwrap() - (-x / 2.0).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn normal_helpers() {
        assert!((two_sided_p(1.959963984540054) - 0.05).abs() < 1e-9);
        assert!((normal_quantile(0.95) - 1.6448536269514722).abs() < 1e-9);
    }
}
