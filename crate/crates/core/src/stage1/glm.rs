//! Logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::dataset::TrialDataset;
use crate::error::{HteError, Result};
use crate::simgen::sigmoid;

pub const MAX_ITERATIONS: usize = 100;
pub const COEF_TOLERANCE: f64 = 1e-8;
pub const SCORE_TOLERANCE: f64 = 1e-6;
/// `sigmoid(30)` is 1 to machine precision.
pub const SEPARATION_BOUND: f64 = 30.0;
const RIDGE: f64 = 1e-8;
const RANK_TOLERANCE: f64 = 1e-10;

/// Column-major design matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Design {
    pub fn n(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn d(&self) -> usize {
        self.columns.len()
    }

    pub fn intercept_only(n: usize) -> Self {
        Design {
            names: vec![INTERCEPT.into()],
            columns: vec![vec![1.0; n]],
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

pub const INTERCEPT: &str = "(intercept)";

pub fn interaction_name(treatment: &str, covariate: &str) -> String {
    format!("{treatment}:{covariate}")
}

fn check_covariates_vary(data: &TrialDataset) -> Result<()> {
    for (name, col) in data.names().iter().zip(data.columns()) {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            return Err(HteError::DegenerateColumn(name.clone()));
        }
    }
    Ok(())
}

/// `[1, A, X_1..X_p]`, plus `A*X_j` for every covariate when
/// `with_interactions` is set.
pub fn treatment_design(data: &TrialDataset, with_interactions: bool) -> Result<Design> {
    check_covariates_vary(data)?;
    let a: Vec<f64> = data.treatment().iter().map(|&v| f64::from(v)).collect();
    let mut names = vec![INTERCEPT.to_string(), data.treatment_name().to_string()];
    let mut columns = vec![vec![1.0; data.n()], a.clone()];
    for (name, col) in data.names().iter().zip(data.columns()) {
        names.push(name.clone());
        columns.push(col.clone());
    }
    if with_interactions {
        for (name, col) in data.names().iter().zip(data.columns()) {
            names.push(interaction_name(data.treatment_name(), name));
            columns.push(col.iter().zip(&a).map(|(x, a)| x * a).collect());
        }
    }
    Ok(Design { names, columns })
}

/// `[1, X_1..X_p]`: the propensity model design.
pub fn covariate_design(data: &TrialDataset) -> Design {
    let mut names = vec![INTERCEPT.to_string()];
    let mut columns = vec![vec![1.0; data.n()]];
    for (name, col) in data.names().iter().zip(data.columns()) {
        names.push(name.clone());
        columns.push(col.clone());
    }
    Design { names, columns }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlmFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Inverse observed information at the optimum, row-major `d x d`.
    pub covariance: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set when the information matrix needed the diagonal ridge.
    pub ridge: bool,
    pub max_abs_score: f64,
}

impl GlmFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|j| self.coefficients[j])
    }

    pub fn std_error(&self, j: usize) -> f64 {
        self.covariance[j][j].max(0.0).sqrt()
    }

    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum()
    }
}

fn log_likelihood(y: &[u8], eta: &[f64]) -> f64 {
    y.iter()
        .zip(eta)
        .map(|(&yi, &e)| {
            // y*eta - log(1 + exp(eta)), evaluated without overflow
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            f64::from(yi) * e - softplus
        })
        .sum()
}

/// Fits `P(Y=1|x) = sigmoid(x·b)` by Newton / IRLS.
///
/// Columns are scaled to unit root-mean-square internally; the separation
/// bound applies to those scaled coefficients, i.e. to the log-odds change
/// per typical column magnitude. Reported coefficients and covariance are
/// on the original scale.
pub fn fit_logistic(design: &Design, y: &[u8]) -> Result<GlmFit> {
    let n = design.n();
    let d = design.d();
    if y.len() != n {
        return Err(HteError::Alignment {
            what: "logistic response",
            expected: n,
            actual: y.len(),
        });
    }
    if d == 0 || d > n {
        return Err(HteError::SingularDesign(format!("{d} columns for {n} observations")));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(HteError::Domain("logistic response must be 0/1".into()));
    }
    let scale: Vec<f64> = design
        .columns
        .iter()
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt())
        .collect();
    if let Some(j) = scale.iter().position(|&s| s == 0.0 || !s.is_finite()) {
        return Err(HteError::SingularDesign(format!("column `{}` is zero or non-finite", design.names[j])));
    }
    let z = DMatrix::from_fn(n, d, |i, j| design.columns[j][i] / scale[j]);
    check_rank(&z, &design.names)?;

    let yv = DVector::from_iterator(n, y.iter().map(|&v| f64::from(v)));
    let mut beta = DVector::<f64>::zeros(d);
    let mut ridge = false;
    let mut iterations = 0;
    let mut converged = false;
    let mut max_score;
    loop {
        let eta = &z * &beta;
        let p = eta.map(sigmoid);
        let resid = &yv - &p;
        let score = z.tr_mul(&resid);
        max_score = (0..d).map(|j| (score[j] * scale[j]).abs()).fold(0.0, f64::max);
        if max_score <= SCORE_TOLERANCE {
            // one more Newton step: the error left by a small score is
            // score / information, the step squares it away
            let (step, used_ridge) = solve_spd(weighted_gram(&z, &p), &score)?;
            ridge |= used_ridge;
            beta += &step;
            iterations += 1;
            converged = true;
            break;
        }
        if iterations == MAX_ITERATIONS {
            break;
        }
        iterations += 1;
        let info = weighted_gram(&z, &p);
        let (step, used_ridge) = solve_spd(info, &score)?;
        ridge |= used_ridge;
        beta += &step;
        if let Some(j) = (0..d).filter(|&j| beta[j].abs() > SEPARATION_BOUND).max_by(|&a, &b| {
            beta[a].abs().total_cmp(&beta[b].abs())
        }) {
            let fit = finish(design, &z, &scale, &beta, y, false, iterations, ridge, max_score);
            return Err(HteError::Separation {
                column: separating_column(design, &beta, j),
                fit: Box::new(fit),
            });
        }
        let max_step = (0..d).map(|j| (step[j] / scale[j]).abs()).fold(0.0, f64::max);
        if max_step <= COEF_TOLERANCE {
            converged = true;
            break;
        }
    }
    let fit = finish(design, &z, &scale, &beta, y, converged, iterations, ridge, max_score);
    if !converged {
        return Err(HteError::NonConvergence { fit: Box::new(fit) });
    }
    // Fitted probabilities numerically 0 or 1 mean the score vanished only
    // because the coefficients are running off to infinity.
    let eta = &z * &beta;
    if eta.iter().any(|e| e.abs() > SEPARATION_BOUND) {
        let j = (0..d).max_by(|&a, &b| beta[a].abs().total_cmp(&beta[b].abs())).unwrap_or(0);
        return Err(HteError::Separation {
            column: separating_column(design, &beta, j),
            fit: Box::new(fit),
        });
    }
    Ok(fit)
}

/// Prefers naming a non-intercept column when one is almost as large.
fn separating_column(design: &Design, beta: &DVector<f64>, j: usize) -> String {
    if design.names[j] == INTERCEPT {
        if let Some(k) = (0..design.d())
            .filter(|&k| design.names[k] != INTERCEPT)
            .max_by(|&a, &b| beta[a].abs().total_cmp(&beta[b].abs()))
        {
            if beta[k].abs() > 0.5 * beta[j].abs() {
                return design.names[k].clone();
            }
        }
    }
    design.names[j].clone()
}

#[allow(clippy::too_many_arguments)]
fn finish(
    design: &Design,
    z: &DMatrix<f64>,
    scale: &[f64],
    beta: &DVector<f64>,
    y: &[u8],
    converged: bool,
    iterations: usize,
    mut ridge: bool,
    max_abs_score: f64,
) -> GlmFit {
    let d = design.d();
    let eta = z * beta;
    let p = eta.map(sigmoid);
    let info = weighted_gram(z, &p);
    let inv = match info.clone().cholesky() {
        Some(c) => c.inverse(),
        None => {
            ridge = true;
            let mut m = info;
            for j in 0..d {
                m[(j, j)] += RIDGE;
            }
            m.clone().cholesky().map(|c| c.inverse()).unwrap_or_else(|| {
                m.pseudo_inverse(1e-12).unwrap_or_else(|_| DMatrix::from_element(d, d, f64::NAN))
            })
        }
    };
    let covariance = (0..d)
        .map(|r| {
            (0..d)
                .map(|c| 0.5 * (inv[(r, c)] + inv[(c, r)]) / (scale[r] * scale[c]))
                .collect()
        })
        .collect();
    GlmFit {
        names: design.names.clone(),
        coefficients: (0..d).map(|j| beta[j] / scale[j]).collect(),
        covariance,
        log_likelihood: log_likelihood(y, eta.as_slice()),
        converged,
        iterations,
        ridge,
        max_abs_score,
    }
}

fn weighted_gram(z: &DMatrix<f64>, p: &DVector<f64>) -> DMatrix<f64> {
    let w = p.map(|pi| pi * (1.0 - pi));
    let mut wz = z.clone();
    for (mut row, wi) in wz.row_iter_mut().zip(w.iter()) {
        row *= *wi;
    }
    z.tr_mul(&wz)
}

fn solve_spd(mut info: DMatrix<f64>, rhs: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    if let Some(c) = info.clone().cholesky() {
        return Ok((c.solve(rhs), false));
    }
    for j in 0..info.nrows() {
        info[(j, j)] += RIDGE;
    }
    match info.cholesky() {
        Some(c) => Ok((c.solve(rhs), true)),
        None => Err(HteError::SingularDesign("information matrix is singular even with ridge".into())),
    }
}

fn check_rank(z: &DMatrix<f64>, names: &[String]) -> Result<()> {
    let gram = z.tr_mul(z);
    let eig = SymmetricEigen::new(gram);
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let (imin, min) = eig
        .eigenvalues
        .iter()
        .cloned()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, 0.0));
    if !(min > RANK_TOLERANCE * max) {
        let v = eig.eigenvectors.column(imin);
        let involved: Vec<&str> = (0..names.len())
            .filter(|&j| v[j].abs() > 0.1)
            .map(|j| names[j].as_str())
            .collect();
        return Err(HteError::SingularDesign(format!(
            "design is rank deficient; collinear columns: {}",
            involved.join(", ")
        )));
    }
    Ok(())
}
