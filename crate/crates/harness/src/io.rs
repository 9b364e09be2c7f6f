//! CSV ingestion and emission.
//!
//! Raw triplets: `t, w_0..w_{p-1}, x_0..x_{q-1}, y`. Precomputed stage
//! predictions: `t, y, mu2_x, mu2_xhat`. Results: one row per emitted
//! interval.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use stagecp::{AbstentionPolicy, PrecomputedPredictions, ScoredPoint, StepRecord, TripletPoint};

use crate::config::Schema;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Raw(Vec<TripletPoint>),
    Precomputed { ys: Vec<(i64, f64)>, predictions: PrecomputedPredictions },
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Raw(p) => p.len(),
            Dataset::Precomputed { ys, .. } => ys.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Scores precomputed rows without any refitting.
    pub fn precomputed_scores(&self) -> Option<Result<Vec<ScoredPoint>>> {
        match self {
            Dataset::Raw(_) => None,
            Dataset::Precomputed { ys, predictions } => Some(
                ys.iter().map(|&(t, y)| predictions.score(t, y).map_err(HarnessError::from)).collect(),
            ),
        }
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| HarnessError::Schema(name.to_string()))
}

/// Indices of `prefix_0, prefix_1, ...` in order; at least one is required.
fn indexed_columns(headers: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut cols = Vec::new();
    while let Some(i) = headers.iter().position(|h| h == format!("{prefix}_{}", cols.len())) {
        cols.push(i);
    }
    if cols.is_empty() {
        return Err(HarnessError::Schema(format!("{prefix}_0")));
    }
    Ok(cols)
}

fn csv_error(e: csv::Error) -> HarnessError {
    let line = e.position().map_or(0, |p| p.line());
    HarnessError::Parse { line, message: e.to_string() }
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize, name: &str) -> Result<T> {
    let line = record.position().map_or(0, |p| p.line());
    let raw = record.get(idx).unwrap_or("");
    raw.parse().map_err(|_| HarnessError::Parse { line, message: format!("bad value {raw:?} in column {name}") })
}

pub fn ingest_csv(path: &Path, schema: Schema) -> Result<Dataset> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    let t_col = column(&headers, "t")?;
    let y_col = column(&headers, "y")?;
    match schema {
        Schema::Raw => {
            let w_cols = indexed_columns(&headers, "w")?;
            let x_cols = indexed_columns(&headers, "x")?;
            let mut points = Vec::new();
            for record in reader.records() {
                let record = record.map_err(csv_error)?;
                let read = |cols: &[usize], prefix: &str| -> Result<Vec<f64>> {
                    cols.iter().enumerate().map(|(j, &c)| field(&record, c, &format!("{prefix}_{j}"))).collect()
                };
                let w = read(&w_cols, "w")?;
                let x = read(&x_cols, "x")?;
                let y = field(&record, y_col, "y")?;
                let t: i64 = field(&record, t_col, "t")?;
                points.push(TripletPoint::new(w, x, y).at(t));
            }
            Ok(Dataset::Raw(points))
        }
        Schema::Precomputed => {
            let mu_x = column(&headers, "mu2_x")?;
            let mu_xhat = column(&headers, "mu2_xhat")?;
            let mut ys = Vec::new();
            let mut predictions = PrecomputedPredictions::new();
            for record in reader.records() {
                let record = record.map_err(csv_error)?;
                let t: i64 = field(&record, t_col, "t")?;
                let y = field(&record, y_col, "y")?;
                predictions.insert(t, field(&record, mu_x, "mu2_x")?, field(&record, mu_xhat, "mu2_xhat")?);
                ys.push((t, y));
            }
            Ok(Dataset::Precomputed { ys, predictions })
        }
    }
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    File::create(path).map_err(|e| HarnessError::io(path, e))
}

fn write_error(path: &Path, e: csv::Error) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => HarnessError::Config(format!("cannot serialise: {other:?}")),
    }
}

pub fn write_raw_csv(path: &Path, points: &[TripletPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let (p, q) = points.first().map_or((1, 1), |z| (z.w.len(), z.x.len()));
    let mut header = vec!["t".to_string()];
    header.extend((0..p).map(|j| format!("w_{j}")));
    header.extend((0..q).map(|j| format!("x_{j}")));
    header.push("y".into());
    w.write_record(&header).map_err(|e| write_error(path, e))?;
    for (i, z) in points.iter().enumerate() {
        let mut row = vec![z.t.unwrap_or(i as i64).to_string()];
        row.extend(z.w.iter().chain(&z.x).map(|v| v.to_string()));
        row.push(z.y.to_string());
        w.write_record(&row).map_err(|e| write_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_precomputed_csv(path: &Path, points: &[ScoredPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["t", "y", "mu2_x", "mu2_xhat"]).map_err(|e| write_error(path, e))?;
    for p in points {
        w.write_record([p.t.to_string(), p.y.to_string(), p.y_given_x.to_string(), p.y_hat.to_string()])
            .map_err(|e| write_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// One row of the results file. Abstained intervals have infinite bounds;
/// parameters a method does not track are NaN.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub t: i64,
    pub method: String,
    pub lo: f64,
    pub hi: f64,
    pub covered: bool,
    pub width: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub alpha_t: f64,
    pub abstained: bool,
}

impl ResultRow {
    pub fn from_record(method: &str, r: &StepRecord, policy: AbstentionPolicy) -> Self {
        let (lo, hi) = r.interval.bounds();
        Self {
            t: r.t,
            method: method.to_string(),
            lo,
            hi,
            covered: r.covered(policy),
            width: r.interval.width(),
            a: r.a,
            b: r.b,
            c: r.c,
            d: r.d,
            alpha_t: r.alpha_t,
            abstained: r.abstained(),
        }
    }
}

fn same(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())
}

impl PartialEq for ResultRow {
    /// Field-for-field, with NaN equal to NaN.
    fn eq(&self, o: &Self) -> bool {
        self.t == o.t
            && self.method == o.method
            && self.covered == o.covered
            && self.abstained == o.abstained
            && [(self.lo, o.lo), (self.hi, o.hi), (self.width, o.width), (self.a, o.a), (self.b, o.b)]
                .iter()
                .chain(&[(self.c, o.c), (self.d, o.d), (self.alpha_t, o.alpha_t)])
                .all(|&(x, y)| same(x, y))
    }
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    if rows.is_empty() {
        w.write_record(["t", "method", "lo", "hi", "covered", "width", "a", "b", "c", "d", "alpha_t", "abstained"])
            .map_err(|e| write_error(path, e))?;
    }
    for row in rows {
        w.serialize(row).map_err(|e| write_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    for name in ["t", "method", "lo", "hi", "covered", "width", "a", "b", "c", "d", "alpha_t", "abstained"] {
        column(&headers, name)?;
    }
    reader.deserialize().map(|r| r.map_err(csv_error)).collect()
}

/// Per-step residual diagnostics for the ratio and component plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub t: i64,
    pub r: f64,
    pub delta_r1: f64,
    pub r2: f64,
    pub mean_dr1: f64,
    pub mean_r2: f64,
}

pub fn write_diagnostics(path: &Path, rows: &[DiagnosticRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row).map_err(|e| write_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticRow>> {
    let mut reader = open_reader(path)?;
    reader.deserialize().map(|r| r.map_err(csv_error)).collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    create(path)?.write_all(text.as_bytes()).map_err(|e| HarnessError::io(path, e))
}
