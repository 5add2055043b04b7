use serde::{Deserialize, Serialize};

use crate::cate::pseudo::PseudoOutcomes;
use crate::error::{HteError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpliftCurve {
    pub q_grid: Vec<f64>,
    /// `U(q) = (1/n) * sum of the top floor(q n) pseudo-outcomes`.
    pub u_normalized: Vec<f64>,
    /// The same partial sums without the `1/n`.
    pub u_cumulative: Vec<f64>,
    pub auqc_normalized: f64,
    pub auqc_cumulative: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    Normalized,
    Cumulative,
}

/// Subject indices by score, highest first; ties keep index order.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Trapezoid area under `(x, y)` with an implicit starting point `(0, 0)`.
fn trapezoid_from_origin(x: &[f64], y: &[f64]) -> f64 {
    let (mut px, mut py, mut area) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        area += (xi - px) * (yi + py) / 2.0;
        px = xi;
        py = yi;
    }
    area
}

pub fn uplift_curve(scores: &[f64], pseudo: &PseudoOutcomes, grid_points: usize) -> Result<UpliftCurve> {
    let n = scores.len();
    if pseudo.len() != n {
        return Err(HteError::Alignment {
            what: "pseudo-outcomes",
            expected: n,
            actual: pseudo.len(),
        });
    }
    if grid_points < 2 {
        return Err(HteError::Config(format!("uplift grid needs at least 2 points, got {grid_points}")));
    }
    if n == 0 {
        return Err(HteError::Domain("uplift curve of an empty sample".into()));
    }
    let order = rank_descending(scores);
    let mut partial = Vec::with_capacity(n + 1);
    partial.push(0.0);
    let mut acc = 0.0;
    for &i in &order {
        acc += pseudo.values[i];
        partial.push(acc);
    }
    let q_grid: Vec<f64> = (1..=grid_points).map(|j| j as f64 / grid_points as f64).collect();
    // floor(j n / G) in integer arithmetic, so that q = 1 reaches all n
    let u_cumulative: Vec<f64> = (1..=grid_points).map(|j| partial[j * n / grid_points]).collect();
    let u_normalized: Vec<f64> = u_cumulative.iter().map(|u| u / n as f64).collect();
    Ok(UpliftCurve {
        auqc_normalized: trapezoid_from_origin(&q_grid, &u_normalized),
        auqc_cumulative: trapezoid_from_origin(&q_grid, &u_cumulative),
        q_grid,
        u_normalized,
        u_cumulative,
        n,
    })
}

pub fn auqc(curve: &UpliftCurve, convention: Convention) -> f64 {
    match convention {
        Convention::Normalized => curve.auqc_normalized,
        Convention::Cumulative => curve.auqc_cumulative,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cate::pseudo::Flavor;

    fn dr(values: Vec<f64>) -> PseudoOutcomes {
        PseudoOutcomes { values, flavor: Flavor::Dr }
    }

    #[test]
    fn hand_accumulation() {
        let c = uplift_curve(&[4.0, 3.0, 2.0, 1.0], &dr(vec![2.0, 1.0, -1.0, 0.0]), 4).unwrap();
        assert_eq!(c.q_grid, vec![0.25, 0.5, 0.75, 1.0]);
        assert_eq!(c.u_normalized, vec![0.5, 0.75, 0.5, 0.5]);
        assert_eq!(c.u_cumulative, vec![2.0, 3.0, 2.0, 2.0]);
        // 0.25 * (0.25 + 0.625 + 0.625 + 0.5)
        assert!((c.auqc_normalized - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ties_keep_index_order() {
        assert_eq!(rank_descending(&[1.0, 2.0, 1.0, 2.0]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn zero_and_constant_curves() {
        let z = uplift_curve(&[0.3, 0.1, 0.2], &dr(vec![0.0; 3]), 10).unwrap();
        assert!(z.u_normalized.iter().all(|&u| u == 0.0) && z.auqc_cumulative == 0.0);
        let n = 1000;
        let scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let c = uplift_curve(&scores, &dr(vec![0.4; n]), 100).unwrap();
        assert!((auqc(&c, Convention::Normalized) - 0.2).abs() < 1e-3);
        assert!((c.u_normalized[99] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn misaligned() {
        assert!(matches!(
            uplift_curve(&[1.0, 2.0], &dr(vec![1.0]), 4),
            Err(HteError::Alignment { .. })
        ));
    }
}
