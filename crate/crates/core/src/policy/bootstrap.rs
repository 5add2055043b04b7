use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{HteError, Result};
use crate::seed;
use crate::stats::{quantile_sorted, sd};

pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapResult {
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Subject-level nonparametric bootstrap of `statistic`, evaluated on index
/// sets drawn with replacement from `0..n`. Returns the standard deviation
/// of the replicates and their 2.5% and 97.5% percentiles.
pub fn bootstrap_se<F>(statistic: F, n: usize, replicates: usize, seed: u64) -> Result<BootstrapResult>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    if replicates < MIN_REPLICATES {
        return Err(HteError::Config(format!(
            "bootstrap needs at least {MIN_REPLICATES} replicates, got {replicates}"
        )));
    }
    if n == 0 {
        return Err(HteError::Domain("bootstrap of an empty sample".into()));
    }
    let mut stats: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::derived_rng(seed, &[seed::stream::BOOTSTRAP, b]);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            statistic(&idx)
        })
        .collect();
    let se = sd(&stats);
    stats.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        se,
        lower: quantile_sorted(&stats, 0.025),
        upper: quantile_sorted(&stats, 0.975),
    })
}
