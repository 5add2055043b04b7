//! Trial data: representation, delimited-table ingestion, ACTG 175
//! preprocessing and treatment-stratified fold construction.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{HteError, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Binary,
}

impl ColumnKind {
    fn infer(values: &[f64]) -> Self {
        if values.iter().all(|&v| v == 0.0 || v == 1.0) {
            ColumnKind::Binary
        } else {
            ColumnKind::Continuous
        }
    }
}

/// Which header names hold covariates, treatment and outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub covariates: Vec<String>,
    pub treatment: String,
    pub outcome: String,
}

impl ColumnSchema {
    pub fn new(covariates: Vec<String>, treatment: impl Into<String>, outcome: impl Into<String>) -> Result<Self> {
        let schema = ColumnSchema {
            covariates,
            treatment: treatment.into(),
            outcome: outcome.into(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for name in &self.covariates {
            if !seen.insert(name.as_str()) {
                return Err(HteError::Schema(format!("duplicate covariate name `{name}`")));
            }
        }
        for role in [&self.treatment, &self.outcome] {
            if seen.contains(role.as_str()) {
                return Err(HteError::Schema(format!(
                    "`{role}` is listed both as a covariate and as treatment/outcome"
                )));
            }
        }
        if self.treatment == self.outcome {
            return Err(HteError::Schema("treatment and outcome share a column".into()));
        }
        Ok(())
    }
}

/// Covariates, binary treatment and binary outcome for `n` subjects.
///
/// Covariates are stored column-major: `column(j)[i]` is covariate `j` of
/// subject `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    names: Vec<String>,
    kinds: Vec<ColumnKind>,
    columns: Vec<Vec<f64>>,
    treatment: Vec<u8>,
    outcome: Vec<u8>,
    treatment_name: String,
    outcome_name: String,
    known_propensity: Option<f64>,
}

impl TrialDataset {
    /// Builds and validates a dataset; column kinds are inferred (a column
    /// holding only 0 and 1 is binary).
    pub fn new(
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        treatment: Vec<u8>,
        outcome: Vec<u8>,
    ) -> Result<Self> {
        let kinds = columns.iter().map(|c| ColumnKind::infer(c)).collect();
        Self::with_kinds(names, kinds, columns, treatment, outcome)
    }

    pub fn with_kinds(
        names: Vec<String>,
        kinds: Vec<ColumnKind>,
        columns: Vec<Vec<f64>>,
        treatment: Vec<u8>,
        outcome: Vec<u8>,
    ) -> Result<Self> {
        let n = treatment.len();
        if n < 2 {
            return Err(HteError::Domain(format!("need at least 2 subjects, got {n}")));
        }
        if outcome.len() != n {
            return Err(HteError::Alignment {
                what: "outcome",
                expected: n,
                actual: outcome.len(),
            });
        }
        if names.len() != columns.len() || kinds.len() != columns.len() {
            return Err(HteError::Schema(format!(
                "{} names and {} kinds for {} covariate columns",
                names.len(),
                kinds.len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(HteError::Schema(format!("duplicate covariate name `{name}`")));
            }
        }
        for ((name, kind), col) in names.iter().zip(&kinds).zip(&columns) {
            if col.len() != n {
                return Err(HteError::Alignment {
                    what: "covariate column",
                    expected: n,
                    actual: col.len(),
                });
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(HteError::Domain(format!(
                    "covariate `{name}` has a missing or non-finite value at row {}",
                    i + 1
                )));
            }
            if *kind == ColumnKind::Binary && col.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(HteError::Domain(format!("binary covariate `{name}` holds values outside {{0,1}}")));
            }
        }
        if let Some(i) = treatment.iter().position(|&a| a > 1) {
            return Err(HteError::Domain(format!("treatment value outside {{0,1}} at row {}", i + 1)));
        }
        if let Some(i) = outcome.iter().position(|&y| y > 1) {
            return Err(HteError::Domain(format!("outcome value outside {{0,1}} at row {}", i + 1)));
        }
        let treated = treatment.iter().filter(|&&a| a == 1).count();
        if treated == 0 || treated == n {
            return Err(HteError::Positivity(
                "both treatment arms must contain at least one subject".into(),
            ));
        }
        Ok(TrialDataset {
            names,
            kinds,
            columns,
            treatment,
            outcome,
            treatment_name: "a".into(),
            outcome_name: "y".into(),
            known_propensity: None,
        })
    }

    pub fn with_role_names(mut self, treatment: impl Into<String>, outcome: impl Into<String>) -> Self {
        self.treatment_name = treatment.into();
        self.outcome_name = outcome.into();
        self
    }

    pub fn with_known_propensity(mut self, e: f64) -> Result<Self> {
        if !(e > 0.0 && e < 1.0) {
            return Err(HteError::Domain(format!("known propensity {e} is not in (0,1)")));
        }
        self.known_propensity = Some(e);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[ColumnKind] {
        &self.kinds
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| HteError::Schema(format!("unknown covariate `{name}`")))
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[u8] {
        &self.outcome
    }

    pub fn treatment_name(&self) -> &str {
        &self.treatment_name
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn known_propensity(&self) -> Option<f64> {
        self.known_propensity
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&a| a == 1).count()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Copy of the dataset with the outcome vector replaced.
    pub fn with_outcome(&self, outcome: Vec<u8>) -> Result<Self> {
        if outcome.len() != self.n() {
            return Err(HteError::Alignment {
                what: "outcome",
                expected: self.n(),
                actual: outcome.len(),
            });
        }
        if outcome.iter().any(|&y| y > 1) {
            return Err(HteError::Domain("outcome value outside {0,1}".into()));
        }
        Ok(TrialDataset {
            outcome,
            ..self.clone()
        })
    }

    /// Copy restricted to the given covariates, in the given order.
    pub fn select(&self, covariates: &[String]) -> Result<Self> {
        let idx = covariates
            .iter()
            .map(|c| self.column_index(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrialDataset {
            names: idx.iter().map(|&j| self.names[j].clone()).collect(),
            kinds: idx.iter().map(|&j| self.kinds[j]).collect(),
            columns: idx.iter().map(|&j| self.columns[j].clone()).collect(),
            ..self.clone()
        })
    }
}

/// A header plus numeric cells; `NaN` marks a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|j| self.columns[j].as_slice())
            .ok_or_else(|| HteError::Schema(format!("missing column `{name}`")))
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "NaN" | "nan" | ".")
}

/// Reads a comma-separated table with a header row. Missing cells
/// (empty, `NA`, `.`) become `NaN`; any other non-numeric cell is an error.
pub fn read_raw_table(path: &Path) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim_matches('"').to_string())
        .collect();
    let mut columns = vec![Vec::new(); headers.len()];
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != headers.len() {
            return Err(HteError::Parse {
                row: r + 1,
                column: String::new(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let value = if is_missing(cell) {
                f64::NAN
            } else {
                cell.parse::<f64>().map_err(|_| HteError::Parse {
                    row: r + 1,
                    column: headers[j].clone(),
                    message: format!("`{cell}` is not a number"),
                })?
            };
            columns[j].push(value);
        }
    }
    Ok(RawTable { headers, columns })
}

fn csv_error(path: &Path, e: csv::Error) -> HteError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HteError::io(path, io),
        other => HteError::Parse {
            row: 0,
            column: String::new(),
            message: format!("{other:?}"),
        },
    }
}

fn binary_value(v: f64, row: usize, column: &str) -> Result<u8> {
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(HteError::Domain(format!(
            "`{column}` must be 0 or 1, found {v} at row {}",
            row + 1
        )))
    }
}

fn require_complete(values: &[f64], column: &str) -> Result<()> {
    match values.iter().position(|v| v.is_nan()) {
        Some(i) => Err(HteError::Parse {
            row: i + 1,
            column: column.to_string(),
            message: "missing value".into(),
        }),
        None => Ok(()),
    }
}

/// Loads a trial table described by `schema`. Row order is preserved.
pub fn load_table(path: &Path, schema: &ColumnSchema) -> Result<TrialDataset> {
    schema.validate()?;
    let raw = read_raw_table(path)?;
    dataset_from_raw(&raw, schema)
}

pub fn dataset_from_raw(raw: &RawTable, schema: &ColumnSchema) -> Result<TrialDataset> {
    let mut columns = Vec::with_capacity(schema.covariates.len());
    for name in &schema.covariates {
        let col = raw.column(name)?;
        require_complete(col, name)?;
        columns.push(col.to_vec());
    }
    let a_col = raw.column(&schema.treatment)?;
    let y_col = raw.column(&schema.outcome)?;
    require_complete(a_col, &schema.treatment)?;
    require_complete(y_col, &schema.outcome)?;
    let treatment = a_col
        .iter()
        .enumerate()
        .map(|(i, &v)| binary_value(v, i, &schema.treatment))
        .collect::<Result<Vec<_>>>()?;
    let outcome = y_col
        .iter()
        .enumerate()
        .map(|(i, &v)| binary_value(v, i, &schema.outcome))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialDataset::new(schema.covariates.clone(), columns, treatment, outcome)?
        .with_role_names(schema.treatment.clone(), schema.outcome.clone()))
}

/// Writes the dataset as a comma-separated table (covariates, treatment,
/// outcome). Values use the shortest representation that parses back to
/// the same `f64`.
pub fn write_table(data: &TrialDataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut header: Vec<&str> = data.names.iter().map(String::as_str).collect();
    header.push(&data.treatment_name);
    header.push(&data.outcome_name);
    writer.write_record(&header).map_err(|e| csv_error(path, e))?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..data.n() {
        record.clear();
        record.extend(data.columns.iter().map(|c| c[i].to_string()));
        record.push(data.treatment[i].to_string());
        record.push(data.outcome[i].to_string());
        writer.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| HteError::io(path, e))
}

/// ACTG 175 column names and preprocessing rules.
pub mod actg175 {
    /// Treatment arm: 0 = ZDV, 1 = ZDV+ddI, 2 = ZDV+ddC, 3 = ddI alone.
    pub const ARM: &str = "arms";
    /// 1 if the composite event was observed.
    pub const EVENT: &str = "cens";
    /// Days to event or censoring.
    pub const DAYS: &str = "days";
    /// 96 weeks.
    pub const HORIZON_DAYS: f64 = 672.0;
    pub const DDI_MONOTHERAPY_ARM: f64 = 3.0;

    /// Columns recorded after randomization, or that encode treatment and
    /// follow-up; none of them may be used as a covariate.
    pub const POST_RANDOMIZATION: &[&str] =
        &["cd420", "cd496", "r", "cd820", "offtrt", "cens", "days", "arms", "treat"];

    /// `zprior` is 1 for every subject in the public table, so the
    /// antiretroviral history indicator `str2` takes its place.
    pub const DEFAULT_COVARIATES: [&str; 16] = [
        "age", "wtkg", "hemo", "homo", "drugs", "karnof", "oprior", "z30", "str2", "preanti", "race",
        "gender", "strat", "symptom", "cd40", "cd80",
    ];

    pub const KARNOFSKY: &str = "karnof";
    pub const BASELINE_CD4: &str = "cd40";

    pub fn default_covariates() -> Vec<String> {
        DEFAULT_COVARIATES.iter().map(|s| s.to_string()).collect()
    }
}

/// Builds the binary ACTG 175 analysis set.
///
/// The ddI-monotherapy arm is dropped, AZT alone becomes `A = 0` and both
/// combination arms `A = 1`. `Y = 1` unless an event occurred on or before
/// day 672; subjects censored earlier without an event keep `Y = 1`.
pub fn preprocess_actg175(raw: &RawTable, covariates: &[String]) -> Result<TrialDataset> {
    for name in covariates {
        if actg175::POST_RANDOMIZATION.contains(&name.as_str()) {
            return Err(HteError::Leakage(name.clone()));
        }
    }
    let arms = raw.column(actg175::ARM)?;
    let events = raw.column(actg175::EVENT)?;
    let days = raw.column(actg175::DAYS)?;
    let source: Vec<&[f64]> = covariates
        .iter()
        .map(|c| raw.column(c))
        .collect::<Result<_>>()?;

    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut columns = vec![Vec::new(); covariates.len()];
    for i in 0..raw.n_rows() {
        let arm = arms[i];
        if arm == actg175::DDI_MONOTHERAPY_ARM {
            continue;
        }
        let a = match arm {
            a if a == 0.0 => 0,
            a if a == 1.0 || a == 2.0 => 1,
            other => {
                return Err(HteError::Domain(format!("unknown arm code {other} at row {}", i + 1)));
            }
        };
        let event = binary_value(events[i], i, actg175::EVENT)?;
        if days[i].is_nan() {
            return Err(HteError::Parse {
                row: i + 1,
                column: actg175::DAYS.into(),
                message: "missing value".into(),
            });
        }
        let y = u8::from(!(event == 1 && days[i] <= actg175::HORIZON_DAYS));
        for (j, col) in source.iter().enumerate() {
            if col[i].is_nan() {
                return Err(HteError::Parse {
                    row: i + 1,
                    column: covariates[j].clone(),
                    message: "missing value".into(),
                });
            }
            columns[j].push(col[i]);
        }
        treatment.push(a);
        outcome.push(y);
    }
    Ok(TrialDataset::new(covariates.to_vec(), columns, treatment, outcome)?.with_role_names("treat", "y"))
}

/// Cross-fitting partition, stratified by treatment arm.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    k: usize,
    seed: u64,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    /// Zero-based fold of subject `i`.
    pub fn fold_of(&self, i: usize) -> usize {
        self.fold_of[i]
    }

    /// Fold labels in `1..=K`, one per subject.
    pub fn fold_ids(&self) -> Vec<usize> {
        self.fold_of.iter().map(|f| f + 1).collect()
    }

    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    /// Subjects outside `fold`: the training set for that fold's models.
    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] != fold).collect()
    }
}

/// Shuffles each arm with a seeded generator and deals subjects to folds
/// round-robin. Control dealing continues where the treated arm stopped so
/// total fold sizes also stay within one of each other.
pub fn make_folds(data: &TrialDataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(HteError::Config(format!("K must be at least 2, got {k}")));
    }
    let mut treated: Vec<usize> = (0..data.n()).filter(|&i| data.treatment[i] == 1).collect();
    let mut control: Vec<usize> = (0..data.n()).filter(|&i| data.treatment[i] == 0).collect();
    if treated.len() < k || control.len() < k {
        return Err(HteError::Infeasible(format!(
            "{k} folds need at least {k} subjects per arm; have {} treated and {} control",
            treated.len(),
            control.len()
        )));
    }
    let mut rng = seed::rng(seed);
    treated.shuffle(&mut rng);
    control.shuffle(&mut rng);
    let mut fold_of = vec![0; data.n()];
    for (pos, &i) in treated.iter().enumerate() {
        fold_of[i] = pos % k;
    }
    let offset = treated.len() % k;
    for (pos, &i) in control.iter().enumerate() {
        fold_of[i] = (pos + offset) % k;
    }
    Ok(FoldAssignment { fold_of, k, seed })
}
