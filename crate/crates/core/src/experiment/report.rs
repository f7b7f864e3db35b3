use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::svg::{LinePlot, Series};
use super::{ConvergenceCurve, CurveFindings, ExperimentConfig};
use crate::bounds::BoundResult;
use crate::deviation::TailReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

/// Paths written by one emission call, in write order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub paths: Vec<PathBuf>,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str, files: &mut ReportFiles) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    files.paths.push(path.to_path_buf());
    Ok(())
}

fn to_json<T: Serialize>(value: &T, path: &Path) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
}

fn csv_error(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Convergence CSV with header `n_total,w,tau,mean_discrepancy,std_discrepancy,repeats`.
pub fn curve_csv(curve: &ConvergenceCurve) -> std::result::Result<String, csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["n_total", "w", "tau", "mean_discrepancy", "std_discrepancy", "repeats"])?;
    for r in &curve.rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Serialize)]
struct Summary<'a> {
    version: &'a str,
    seed: u64,
    config: &'a ExperimentConfig,
    findings: Option<&'a CurveFindings>,
}

/// Writes `convergence.csv`, one plot per `tau` (curves over `w`) and one
/// per `w` (curves over `tau`), and `summary.json`. A curve without rows
/// produces a header-only CSV and no plots.
pub fn emit_report(
    curve: &ConvergenceCurve,
    config: &ExperimentConfig,
    findings: Option<&CurveFindings>,
    dir: &Path,
) -> Result<ReportFiles> {
    ensure_dir(dir)?;
    let mut files = ReportFiles::default();
    let csv_path = dir.join("convergence.csv");
    let text = curve_csv(curve).map_err(csv_error(&csv_path))?;
    write_text(&csv_path, &text, &mut files)?;

    if !curve.rows.is_empty() && curve.is_complete() {
        let steps = curve.n_totals.len();
        let points = |i: usize, j: usize| -> Vec<(f64, f64)> {
            (0..steps)
                .map(|s| {
                    let r = curve.row(i, j, s);
                    (r.n_total as f64, r.mean_discrepancy)
                })
                .collect()
        };
        for (j, tau) in curve.tau_grid.iter().enumerate() {
            let plot = LinePlot {
                title: format!("tau = {tau}"),
                x_label: "N1 + N2".into(),
                y_label: "mean discrepancy".into(),
                series: curve
                    .w_grid
                    .iter()
                    .enumerate()
                    .map(|(i, w)| Series {
                        label: format!("w = {w}"),
                        points: points(i, j),
                    })
                    .collect(),
            };
            write_text(&dir.join(format!("fig1_tau_{tau}.svg")), &plot.render(), &mut files)?;
        }
        for (i, w) in curve.w_grid.iter().enumerate() {
            let plot = LinePlot {
                title: format!("w = {w}"),
                x_label: "N1 + N2".into(),
                y_label: "mean discrepancy".into(),
                series: curve
                    .tau_grid
                    .iter()
                    .enumerate()
                    .map(|(j, tau)| Series {
                        label: format!("tau = {tau}"),
                        points: points(i, j),
                    })
                    .collect(),
            };
            write_text(&dir.join(format!("fig2_w_{w}.svg")), &plot.render(), &mut files)?;
        }
    }

    let json_path = dir.join("summary.json");
    let summary = Summary {
        version: env!("CARGO_PKG_VERSION"),
        seed: config.seed,
        config,
        findings,
    };
    let text = to_json(&summary, &json_path)?;
    write_text(&json_path, &text, &mut files)?;
    Ok(files)
}

/// Writes `<name>.csv` or `<name>.json`.
pub fn emit_tail_report(report: &TailReport, dir: &Path, name: &str, format: Format) -> Result<ReportFiles> {
    ensure_dir(dir)?;
    let mut files = ReportFiles::default();
    match format {
        Format::Csv => {
            let path = dir.join(format!("{name}.csv"));
            report.save_csv(&path)?;
            files.paths.push(path);
        }
        Format::Json => {
            let path = dir.join(format!("{name}.json"));
            let text = to_json(report, &path)?;
            write_text(&path, &text, &mut files)?;
        }
    }
    Ok(files)
}

#[derive(Serialize)]
struct BoundRow<'a> {
    name: &'a str,
    value: f64,
    discrepancy_term: f64,
    stochastic_term: f64,
    preconditions_ok: bool,
    radius: Option<f64>,
    implied_confidence: Option<f64>,
}

pub fn bounds_csv(results: &[BoundResult]) -> std::result::Result<String, csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record([
        "name",
        "value",
        "discrepancy_term",
        "stochastic_term",
        "preconditions_ok",
        "radius",
        "implied_confidence",
    ])?;
    for r in results {
        w.serialize(BoundRow {
            name: &r.name,
            value: r.value,
            discrepancy_term: r.discrepancy_term,
            stochastic_term: r.stochastic_term,
            preconditions_ok: r.preconditions.ok,
            radius: r.radius,
            implied_confidence: r.implied_confidence,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `bounds.csv` or `bounds.json`.
pub fn emit_bounds(results: &[BoundResult], dir: &Path, format: Format) -> Result<ReportFiles> {
    ensure_dir(dir)?;
    let mut files = ReportFiles::default();
    match format {
        Format::Csv => {
            let path = dir.join("bounds.csv");
            let text = bounds_csv(results).map_err(csv_error(&path))?;
            write_text(&path, &text, &mut files)?;
        }
        Format::Json => {
            let path = dir.join("bounds.json");
            let text = to_json(&results, &path)?;
            write_text(&path, &text, &mut files)?;
        }
    }
    Ok(files)
}
