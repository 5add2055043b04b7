//! Report files: a JSON summary plus delimited curve tables. Every number
//! is written with 6 significant digits so the bytes are reproducible.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::{HteError, Result};
use crate::stage1::{Stage1Report, SteppCurve};
use crate::workflow::run::{Stage2Report, WorkflowReport};
use crate::workflow::study::StudySummary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Format {
    Json,
    Csv,
    Tsv,
}

impl Format {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "tsv" => Ok(Format::Tsv),
            _ => Err(HteError::Config(format!("unknown output format `{s}` (json, csv, tsv)"))),
        }
    }

    fn table(self) -> Option<(u8, &'static str)> {
        match self {
            Format::Json => None,
            Format::Csv => Some((b',', "csv")),
            Format::Tsv => Some((b'\t', "tsv")),
        }
    }
}

pub fn default_formats() -> BTreeSet<Format> {
    [Format::Json, Format::Csv].into_iter().collect()
}

/// `x` rounded to 6 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// Text form used in tables and JSON: shortest representation of the
/// rounded value, `inf`/`-inf` for infinities and `NA` for NaN.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        let r = round_sig(x);
        if r == 0.0 {
            "0".into()
        } else {
            format!("{r}")
        }
    }
}

/// Serializes with all floats rounded. Fields that may hold infinite
/// thresholds write them as `"inf"`/`"-inf"`; other non-finite values
/// become `null`.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value).map_err(|e| HteError::Domain(e.to_string()))?;
    round_value(&mut v);
    serde_json::to_string_pretty(&v).map_err(|e| HteError::Domain(e.to_string()))
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) => {
            if let (Some(f), false) = (n.as_f64(), n.is_i64() || n.is_u64()) {
                if let Some(r) = serde_json::Number::from_f64(round_sig(f)) {
                    *n = r;
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| HteError::io(path, e))
}

fn write_table(dir: &Path, stem: &str, format: Format, header: &[&str], rows: Vec<Vec<String>>) -> Result<PathBuf> {
    let (delim, ext) = format.table().expect("tabular format");
    let path = dir.join(format!("{stem}.{ext}"));
    let mut w = csv::WriterBuilder::new().delimiter(delim).from_writer(Vec::new());
    let io = |e: csv::Error| HteError::Domain(e.to_string());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| HteError::Domain(e.to_string()))?;
    write_file(&path, &bytes)?;
    Ok(path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HteError::io(dir, e))
}

/// Writes `report.json` and, for each tabular format, the STEPP curve and
/// (past the gate) the uplift, value and NP tables.
pub fn emit_report(report: &WorkflowReport, out_dir: &Path, formats: &BTreeSet<Format>) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    if formats.contains(&Format::Json) {
        let path = out_dir.join("report.json");
        write_file(&path, to_json(report)?.as_bytes())?;
        written.push(path);
    }
    for &format in formats.iter().filter(|f| f.table().is_some()) {
        if let Some(c) = &report.stepp {
            written.push(stepp_table(c, out_dir, format)?);
        }
        if let Some(s2) = &report.stage2 {
            written.extend(stage2_tables(s2, out_dir, format)?);
        }
    }
    Ok(written)
}

fn stepp_table(c: &SteppCurve, out_dir: &Path, format: Format) -> Result<PathBuf> {
    let rows = (0..c.len())
        .map(|w| {
            vec![
                fmt_num(c.window_centers[w]),
                fmt_num(c.risk_diff[w]),
                c.n_treated[w].to_string(),
                c.n_control[w].to_string(),
                c.band_low.as_ref().map_or("NA".into(), |b| fmt_num(b[w])),
                c.band_high.as_ref().map_or("NA".into(), |b| fmt_num(b[w])),
            ]
        })
        .collect();
    write_table(
        out_dir,
        "stepp",
        format,
        &["center", "risk_diff", "n_treated", "n_control", "band_low", "band_high"],
        rows,
    )
}

#[derive(Serialize)]
struct Stage1Output<'a> {
    stage1: &'a Stage1Report,
    stepp: Option<&'a SteppCurve>,
}

/// Writes `stage1.json` (tests, gate, optional STEPP curve) and the STEPP
/// table for a Stage 1 run made on its own.
pub fn emit_stage1(
    stage1: &Stage1Report,
    stepp: Option<&SteppCurve>,
    out_dir: &Path,
    formats: &BTreeSet<Format>,
) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    if formats.contains(&Format::Json) {
        let path = out_dir.join("stage1.json");
        write_file(&path, to_json(&Stage1Output { stage1, stepp })?.as_bytes())?;
        written.push(path);
    }
    if let Some(c) = stepp {
        for &format in formats.iter().filter(|f| f.table().is_some()) {
            written.push(stepp_table(c, out_dir, format)?);
        }
    }
    Ok(written)
}

fn stage2_tables(s2: &Stage2Report, out_dir: &Path, format: Format) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let u = &s2.uplift;
    let rows = (0..u.q_grid.len())
        .map(|j| vec![fmt_num(u.q_grid[j]), fmt_num(u.u_normalized[j]), fmt_num(u.u_cumulative[j])])
        .collect();
    written.push(write_table(out_dir, "uplift", format, &["q", "u_normalized", "u_cumulative"], rows)?);
    let v = &s2.value;
    let rows = (0..v.thresholds.len())
        .map(|j| {
            vec![
                fmt_num(v.thresholds[j]),
                fmt_num(v.values[j]),
                v.se.as_ref().map_or("NA".into(), |se| fmt_num(se[j])),
            ]
        })
        .collect();
    written.push(write_table(out_dir, "value", format, &["threshold", "value", "se"], rows)?);
    let np = &s2.np;
    let rows = (0..np.thresholds.len())
        .map(|j| {
            vec![
                fmt_num(np.thresholds[j]),
                fmt_num(np.harm_rate[j]),
                fmt_num(np.harm_upper[j]),
                fmt_num(np.benefit_capture[j]),
                np.feasible[j].to_string(),
                fmt_num(np.benefit_among_treated[j]),
                np.n_treated[j].to_string(),
            ]
        })
        .collect();
    written.push(write_table(
        out_dir,
        "np",
        format,
        &[
            "threshold",
            "harm_rate",
            "harm_upper",
            "benefit_capture",
            "feasible",
            "benefit_among_treated",
            "n_treated",
        ],
        rows,
    )?);
    Ok(written)
}

/// Writes `stage2.json` and the uplift, value and NP tables for a Stage 2
/// run made outside the gated workflow.
pub fn emit_stage2(s2: &Stage2Report, out_dir: &Path, formats: &BTreeSet<Format>) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    if formats.contains(&Format::Json) {
        let path = out_dir.join("stage2.json");
        write_file(&path, to_json(s2)?.as_bytes())?;
        written.push(path);
    }
    for &format in formats.iter().filter(|f| f.table().is_some()) {
        written.extend(stage2_tables(s2, out_dir, format)?);
    }
    Ok(written)
}

/// Writes `study.json` and one summary row per scenario in `study.<ext>`,
/// plus the per-replicate records in `replicates.<ext>`.
pub fn emit_study(summary: &StudySummary, out_dir: &Path, formats: &BTreeSet<Format>) -> Result<Vec<PathBuf>> {
    ensure_dir(out_dir)?;
    let mut written = Vec::new();
    if formats.contains(&Format::Json) {
        let path = out_dir.join("study.json");
        write_file(&path, to_json(summary)?.as_bytes())?;
        written.push(path);
    }
    for &format in formats.iter().filter(|f| f.table().is_some()) {
        let rows = summary
            .scenarios
            .iter()
            .map(|s| {
                vec![
                    s.scenario.clone(),
                    s.n.to_string(),
                    s.replicates.to_string(),
                    s.failures.to_string(),
                    fmt_num(s.proceed_rate),
                    fmt_num(s.mean_auqc_cumulative),
                    fmt_num(s.mean_auqc_normalized),
                    fmt_num(s.mean_value_gain),
                    fmt_num(s.np_infeasible_rate),
                    fmt_num(s.uncond_mean_auqc_cumulative),
                    fmt_num(s.uncond_mean_auqc_normalized),
                    fmt_num(s.uncond_mean_value_gain),
                    fmt_num(s.uncond_np_infeasible_rate),
                    summary.master_seed.to_string(),
                ]
            })
            .collect();
        written.push(write_table(
            out_dir,
            "study",
            format,
            &[
                "scenario",
                "n",
                "replicates",
                "failures",
                "proceed_rate",
                "mean_auqc_cumulative",
                "mean_auqc_normalized",
                "mean_value_gain",
                "np_infeasible_rate",
                "uncond_mean_auqc_cumulative",
                "uncond_mean_auqc_normalized",
                "uncond_mean_value_gain",
                "uncond_np_infeasible_rate",
                "master_seed",
            ],
            rows,
        )?);
        let opt = |m: &Option<crate::workflow::study::Stage2Metrics>, f: fn(&crate::workflow::study::Stage2Metrics) -> f64| {
            m.as_ref().map_or("NA".into(), |m| fmt_num(f(m)))
        };
        let rows = summary
            .records
            .iter()
            .map(|r| {
                vec![
                    r.scenario.clone(),
                    r.replicate.to_string(),
                    r.proceed.to_string(),
                    fmt_num(r.lrt_p),
                    opt(&r.stage2, |m| m.auqc_cumulative),
                    opt(&r.stage2, |m| m.value_gain),
                    r.stage2
                        .as_ref()
                        .map_or("NA".into(), |m| if m.np_feasible { "feasible" } else { "best-attainable" }.into()),
                    r.error.clone().unwrap_or_default(),
                ]
            })
            .collect();
        written.push(write_table(
            out_dir,
            "replicates",
            format,
            &["scenario", "replicate", "proceed", "lrt_p", "auqc_cumulative", "value_gain", "np_status", "error"],
            rows,
        )?);
    }
    Ok(written)
}
