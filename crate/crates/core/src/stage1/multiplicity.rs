//! Holm step-down and Benjamini-Hochberg step-up adjusted p-values.

use crate::error::{HteError, Result};

fn check(raw: &[f64]) -> Result<()> {
    match raw.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(p) => Err(HteError::Domain(format!("p-value {p} is outside [0,1]"))),
        None => Ok(()),
    }
}

/// Ascending order of `raw`, stable in the input index.
fn ascending(raw: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]).then(a.cmp(&b)));
    order
}

/// Holm: the i-th smallest (1-based) is multiplied by `m - i + 1`, then a
/// running maximum is enforced and values are capped at 1.
pub fn adjust_holm(raw: &[f64]) -> Result<Vec<f64>> {
    check(raw)?;
    let m = raw.len();
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &i) in ascending(raw).iter().enumerate() {
        running = running.max((raw[i] * (m - rank) as f64).min(1.0));
        adjusted[i] = running;
    }
    Ok(adjusted)
}

/// Benjamini-Hochberg: the i-th smallest is multiplied by `m / i`, then a
/// running minimum is taken from the largest down and values are capped at 1.
pub fn adjust_bh(raw: &[f64]) -> Result<Vec<f64>> {
    check(raw)?;
    let m = raw.len();
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    let order = ascending(raw);
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(raw[i] * m as f64 / (rank + 1) as f64);
        adjusted[i] = running.min(1.0);
    }
    Ok(adjusted)
}
