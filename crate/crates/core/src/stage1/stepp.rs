//! Subpopulation treatment effect pattern plot: windowed risk differences
//! along a continuous biomarker, with permutation bands.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{ColumnKind, TrialDataset};
use crate::error::{HteError, Result};
use crate::seed;
use crate::stats::{median, quantile_sorted};

pub const MIN_WINDOW: usize = 20;
pub const MIN_PERMUTATIONS: usize = 200;

/// `max(50, n/10)` subjects per window, half-window step.
pub fn default_window(n: usize) -> (usize, usize) {
    let w = (n / 10).max(50).min(n);
    (w, (w / 2).max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteppCurve {
    pub biomarker: String,
    pub window_size: usize,
    pub step: usize,
    pub window_centers: Vec<f64>,
    pub risk_diff: Vec<f64>,
    pub n_treated: Vec<usize>,
    pub n_control: Vec<usize>,
    pub band_low: Option<Vec<f64>>,
    pub band_high: Option<Vec<f64>>,
    /// Overall treated-minus-control risk difference.
    pub overall_risk_diff: f64,
    pub dropped_windows: usize,
    /// Subject indices sorted by biomarker (ties by index).
    #[serde(skip)]
    order: Vec<usize>,
    /// Half-open ranges into `order`, one per retained window.
    #[serde(skip)]
    windows: Vec<(usize, usize)>,
}

impl SteppCurve {
    pub fn len(&self) -> usize {
        self.risk_diff.len()
    }

    pub fn is_empty(&self) -> bool {
        self.risk_diff.is_empty()
    }

    /// Subject indices in retained window `w`.
    pub fn window_members(&self, w: usize) -> &[usize] {
        let (s, e) = self.windows[w];
        &self.order[s..e]
    }

    /// Number of windows whose observed risk difference leaves the band.
    pub fn windows_outside_band(&self) -> Option<usize> {
        let (lo, hi) = (self.band_low.as_ref()?, self.band_high.as_ref()?);
        Some(
            self.risk_diff
                .iter()
                .zip(lo.iter().zip(hi))
                .filter(|(r, (l, h))| **r < **l || **r > **h)
                .count(),
        )
    }
}

/// Start offsets of the windows `[0, w), [s, w+s), ...`; a final window
/// anchored at the last subject is appended when the regular grid stops
/// short, so every subject is covered.
fn window_starts(n: usize, window: usize, step: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..=(n - window) / step).map(|k| k * step).collect();
    if starts.last().is_none_or(|&s| s + window < n) {
        starts.push(n - window);
    }
    starts
}

fn arm_means(members: &[usize], treatment: &[u8], outcome: &[u8]) -> Option<(f64, usize, usize)> {
    let (mut n1, mut n0, mut y1, mut y0) = (0usize, 0usize, 0usize, 0usize);
    for &i in members {
        if treatment[i] == 1 {
            n1 += 1;
            y1 += outcome[i] as usize;
        } else {
            n0 += 1;
            y0 += outcome[i] as usize;
        }
    }
    if n1 == 0 || n0 == 0 {
        return None;
    }
    Some((y1 as f64 / n1 as f64 - y0 as f64 / n0 as f64, n1, n0))
}

pub fn stepp_curve(data: &TrialDataset, biomarker: &str, window_size: usize, step: usize) -> Result<SteppCurve> {
    let j = data.column_index(biomarker)?;
    if data.kinds()[j] != ColumnKind::Continuous {
        return Err(HteError::Domain(format!("STEPP biomarker `{biomarker}` is not continuous")));
    }
    if window_size < MIN_WINDOW {
        return Err(HteError::Config(format!(
            "STEPP window of {window_size} subjects is below the minimum of {MIN_WINDOW}"
        )));
    }
    if window_size > data.n() {
        return Err(HteError::Config(format!(
            "STEPP window of {window_size} exceeds the sample size {}",
            data.n()
        )));
    }
    if step == 0 {
        return Err(HteError::Config("STEPP step must be >= 1".into()));
    }
    let x = data.column(j);
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));

    let mut curve = SteppCurve {
        biomarker: biomarker.to_string(),
        window_size,
        step,
        window_centers: Vec::new(),
        risk_diff: Vec::new(),
        n_treated: Vec::new(),
        n_control: Vec::new(),
        band_low: None,
        band_high: None,
        overall_risk_diff: arm_means(&order, data.treatment(), data.outcome()).map_or(0.0, |r| r.0),
        dropped_windows: 0,
        order: Vec::new(),
        windows: Vec::new(),
    };
    for start in window_starts(data.n(), window_size, step) {
        let members = &order[start..start + window_size];
        match arm_means(members, data.treatment(), data.outcome()) {
            Some((rd, n1, n0)) => {
                let values: Vec<f64> = members.iter().map(|&i| x[i]).collect();
                curve.window_centers.push(median(&values));
                curve.risk_diff.push(rd);
                curve.n_treated.push(n1);
                curve.n_control.push(n0);
                curve.windows.push((start, start + window_size));
            }
            None => curve.dropped_windows += 1,
        }
    }
    if curve.dropped_windows > 0 {
        log::warn!(
            "STEPP on `{biomarker}`: dropped {} window(s) lacking one arm",
            curve.dropped_windows
        );
    }
    curve.order = order;
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteppBand {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

/// Permutation band: treatment labels are shuffled `n_perm` times with
/// covariates and outcomes fixed. Each permuted window's deviation from the
/// permuted overall risk difference is collected; the band is the observed
/// overall risk difference plus the pointwise `(level/2, 1 - level/2)`
/// quantiles of those deviations.
pub fn stepp_band(data: &TrialDataset, curve: &SteppCurve, n_perm: usize, level: f64, seed: u64) -> Result<SteppBand> {
    if n_perm < MIN_PERMUTATIONS {
        return Err(HteError::Config(format!(
            "STEPP bands need at least {MIN_PERMUTATIONS} permutations, got {n_perm}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(HteError::Config(format!("band level {level} is not in (0,1)")));
    }
    let deviations: Vec<Vec<Option<f64>>> = (0..n_perm as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::derived_rng(seed, &[seed::stream::STEPP, b]);
            let mut labels = data.treatment().to_vec();
            labels.shuffle(&mut rng);
            let overall = arm_means(&curve.order, &labels, data.outcome()).map_or(0.0, |r| r.0);
            (0..curve.len())
                .map(|w| arm_means(curve.window_members(w), &labels, data.outcome()).map(|r| r.0 - overall))
                .collect()
        })
        .collect();
    let mut low = Vec::with_capacity(curve.len());
    let mut high = Vec::with_capacity(curve.len());
    for w in 0..curve.len() {
        let mut d: Vec<f64> = deviations.iter().filter_map(|row| row[w]).collect();
        d.sort_by(f64::total_cmp);
        low.push(curve.overall_risk_diff + quantile_sorted(&d, level / 2.0));
        high.push(curve.overall_risk_diff + quantile_sorted(&d, 1.0 - level / 2.0));
    }
    Ok(SteppBand { low, high })
}

impl SteppCurve {
    pub fn with_band(mut self, band: SteppBand) -> Self {
        self.band_low = Some(band.low);
        self.band_high = Some(band.high);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(n: usize, y: impl Fn(usize) -> u8) -> TrialDataset {
        let x = (0..n).map(|i| ((i * 37) % n) as f64 + 0.5).collect();
        TrialDataset::new(
            vec!["bm".into()],
            vec![x],
            (0..n).map(|i| (i % 2) as u8).collect(),
            (0..n).map(y).collect(),
        )
        .unwrap()
    }

    #[test]
    fn window_count() {
        let d = dataset(100, |i| (i % 3 == 0) as u8);
        let c = stepp_curve(&d, "bm", 20, 10).unwrap();
        assert_eq!(c.len(), 9);
        assert_eq!(c.windows.last(), Some(&(80, 100)));
    }

    #[test]
    fn tail_window_covers_every_subject() {
        let d = dataset(105, |i| (i % 3 == 0) as u8);
        let c = stepp_curve(&d, "bm", 20, 10).unwrap();
        let mut covered = [false; 105];
        for w in 0..c.len() {
            for &i in c.window_members(w) {
                covered[i] = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn constant_outcome_gives_zero_curve_and_zero_band() {
        let d = dataset(120, |_| 1);
        let c = stepp_curve(&d, "bm", 30, 15).unwrap();
        assert!(c.risk_diff.iter().all(|&r| r == 0.0));
        let band = stepp_band(&d, &c, 200, 0.05, 4).unwrap();
        assert!(band.low.iter().zip(&band.high).all(|(l, h)| *l == 0.0 && *h == 0.0));
    }

    #[test]
    fn refuses_small_windows_and_binary_biomarkers() {
        let d = dataset(100, |i| (i % 3 == 0) as u8);
        assert!(matches!(stepp_curve(&d, "bm", 19, 5), Err(HteError::Config(_))));
        let b = TrialDataset::new(
            vec!["flag".into()],
            vec![(0..40).map(|i| (i % 2) as f64).collect()],
            (0..40).map(|i| (i % 3 == 0) as u8).collect(),
            (0..40).map(|i| (i % 5 == 0) as u8).collect(),
        )
        .unwrap();
        assert!(matches!(stepp_curve(&b, "flag", 20, 10), Err(HteError::Domain(_))));
        assert!(matches!(stepp_band(&d, &stepp_curve(&d, "bm", 20, 10).unwrap(), 50, 0.05, 1), Err(HteError::Config(_))));
    }

    #[test]
    fn band_is_deterministic() {
        let d = dataset(150, |i| ((i * 7) % 5 < 2) as u8);
        let c = stepp_curve(&d, "bm", 40, 20).unwrap();
        assert_eq!(stepp_band(&d, &c, 200, 0.05, 9).unwrap(), stepp_band(&d, &c, 200, 0.05, 9).unwrap());
    }
}
