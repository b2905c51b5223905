//! CSV, JSON and SVG artifacts.
//!
//! All writers are deterministic: rows keep their input order, floats are
//! printed in shortest round-trip form and the SVG uses fixed precision.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qa::{CorrelationLevel, CorrelationResult, Method, QaRecord, Structure};
use crate::sim::{Experiment, SummaryRow, SweepReport};

pub const SUMMARY_CSV: &str = "summary.csv";
pub const CORRELATIONS_CSV: &str = "correlations.csv";
pub const LEVEL_CORRELATIONS_CSV: &str = "level_correlations.csv";
pub const SWEEP_JSON: &str = "sweep.json";

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

pub fn write_csv<S: Serialize>(path: impl AsRef<Path>, rows: &[S]) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads every row of a headed CSV file; a missing file is a [`Error::MissingArtifact`].
pub fn read_csv<D: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<D>> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

pub fn write_json<S: Serialize + ?Sized>(path: impl AsRef<Path>, value: &S) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<D: DeserializeOwned>(path: impl AsRef<Path>) -> Result<D> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One R² entry of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub experiment: String,
    pub level: CorrelationLevel,
    pub structure: Structure,
    pub method: Method,
    pub r_squared: f64,
}

pub fn table_rows(experiment: &str, results: &[CorrelationResult]) -> Vec<TableRow> {
    results
        .iter()
        .map(|c| TableRow {
            experiment: experiment.to_string(),
            level: c.level,
            structure: c.structure,
            method: c.method,
            r_squared: c.r_squared,
        })
        .collect()
}

/// Full regression output of one grouping, optionally within one sweep level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub experiment: String,
    pub sweep_level: Option<f64>,
    pub level: CorrelationLevel,
    pub structure: Structure,
    pub method: Method,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
    pub zero_variance: bool,
}

impl CorrelationRow {
    pub fn new(experiment: &str, sweep_level: Option<f64>, c: &CorrelationResult) -> Self {
        Self {
            experiment: experiment.to_string(),
            sweep_level,
            level: c.level,
            structure: c.structure,
            method: c.method,
            slope: c.slope,
            intercept: c.intercept,
            r_squared: c.r_squared,
            n: c.n,
            zero_variance: c.zero_variance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelInfo {
    pub index: usize,
    pub level: f64,
    pub outside_lumen: bool,
    /// Whether the level enters the pooled correlations.
    pub correlated: bool,
    pub records: usize,
    pub dropped_slices: usize,
    pub failed_contours: usize,
    pub records_csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepInfo {
    pub experiment: Experiment,
    pub levels: Vec<LevelInfo>,
}

pub fn records_file(index: usize) -> String {
    format!("records_level_{index:02}.csv")
}

/// Writes one records CSV per level, the summary, both correlation tables and `sweep.json`.
pub fn write_sweep(report: &SweepReport, include_outside: bool, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let exp = report.experiment.as_str();
    let mut levels = Vec::with_capacity(report.levels.len());
    for l in &report.levels {
        let name = records_file(l.index);
        write_csv(dir.join(&name), &l.records)?;
        levels.push(LevelInfo {
            index: l.index,
            level: l.level,
            outside_lumen: l.outside_lumen,
            correlated: SweepReport::correlated(report.experiment, l.level, include_outside),
            records: l.records.len(),
            dropped_slices: l.dropped_slices,
            failed_contours: l.failed_contours,
            records_csv: name,
        });
    }
    write_csv(dir.join(SUMMARY_CSV), &report.summary)?;
    write_csv(dir.join(CORRELATIONS_CSV), &table_rows(exp, &report.correlations))?;
    let per_level: Vec<CorrelationRow> = report
        .correlations
        .iter()
        .map(|c| CorrelationRow::new(exp, None, c))
        .chain(report.level_correlations.iter().map(|(l, c)| CorrelationRow::new(exp, Some(*l), c)))
        .collect();
    write_csv(dir.join(LEVEL_CORRELATIONS_CSV), &per_level)?;
    write_json(dir.join(SWEEP_JSON), &SweepInfo { experiment: report.experiment, levels })
}

pub fn write_records(path: impl AsRef<Path>, records: &[QaRecord]) -> Result<()> {
    write_csv(path, records)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<QaRecord>> {
    read_csv(path)
}

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 240.0;
const MARGIN: [f64; 4] = [60.0, 20.0, 30.0, 40.0]; // left, right, top, bottom
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Panel<'a> {
    title: &'a str,
    top: f64,
    value: fn(&SummaryRow) -> f64,
}

fn nice_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 0.5 * lo.abs().max(1e-3);
        hi += 0.5 * hi.abs().max(1e-3);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Median Dice and median uncertainty per level, one line per method and
/// structure (lumen dashed). Offset levels beyond 1 are shaded.
pub fn sweep_svg(experiment: Experiment, summary: &[SummaryRow], outside_from: Option<f64>) -> String {
    let mut methods: Vec<Method> = Vec::new();
    for r in summary {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let panels = [
        Panel { title: "median Dice", top: MARGIN[2], value: |r| r.median_dice },
        Panel { title: "median uncertainty", top: MARGIN[2] + PANEL_HEIGHT + MARGIN[3], value: |r| r.median_uncertainty },
    ];
    let height = MARGIN[2] + 2.0 * (PANEL_HEIGHT + MARGIN[3]) + 20.0 * methods.len().div_ceil(2) as f64;
    let (x0, x1) = nice_range(summary.iter().map(|r| r.level));
    let plot_w = WIDTH - MARGIN[0] - MARGIN[1];
    let px = |x: f64| MARGIN[0] + (x - x0) / (x1 - x0) * plot_w;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for panel in &panels {
        let (y0, y1) = nice_range(summary.iter().map(panel.value));
        let py = |y: f64| panel.top + PANEL_HEIGHT - (y - y0) / (y1 - y0) * PANEL_HEIGHT;
        if let Some(edge) = outside_from.filter(|e| *e < x1) {
            let left = px(edge.max(x0));
            let _ = writeln!(
                s,
                r##"<rect x="{left:.2}" y="{:.2}" width="{:.2}" height="{PANEL_HEIGHT:.2}" fill="#f4cccc"/>"##,
                panel.top,
                MARGIN[0] + plot_w - left
            );
        }
        let bottom = panel.top + PANEL_HEIGHT;
        let _ = writeln!(
            s,
            r#"<polyline points="{:.2},{:.2} {:.2},{bottom:.2} {:.2},{bottom:.2}" fill="none" stroke="black"/>"#,
            MARGIN[0],
            panel.top,
            MARGIN[0],
            MARGIN[0] + plot_w
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{} vs {experiment} level</text>"#, MARGIN[0], panel.top - 8.0, panel.title);
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xv:.2}</text>"#, px(xv), bottom + 14.0);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.3}</text>"#, MARGIN[0] - 4.0, py(yv) + 4.0);
        }
        for (mi, m) in methods.iter().enumerate() {
            for structure in Structure::ALL {
                let pts: Vec<String> = summary
                    .iter()
                    .filter(|r| r.method == *m && r.structure == structure && (panel.value)(r).is_finite())
                    .map(|r| format!("{:.2},{:.2}", px(r.level), py((panel.value)(r))))
                    .collect();
                if pts.is_empty() {
                    continue;
                }
                let dash = if structure == Structure::Lumen { r#" stroke-dasharray="5,3""# } else { "" };
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
                    pts.join(" "),
                    PALETTE[mi % PALETTE.len()]
                );
            }
        }
    }
    let legend_top = MARGIN[2] + 2.0 * (PANEL_HEIGHT + MARGIN[3]);
    for (mi, m) in methods.iter().enumerate() {
        let x = MARGIN[0] + (mi % 2) as f64 * 260.0;
        let y = legend_top + 20.0 * (mi / 2) as f64;
        let color = PALETTE[mi % PALETTE.len()];
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="1.5"/>"#, x + 24.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{m} (wall solid, lumen dashed)</text>"#, x + 30.0, y + 4.0);
    }
    s.push_str("</svg>\n");
    s
}
