//! File formats: CSV time series in, JSON documents out.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use gfgl::simulate::SimSpec;
use gfgl::{DMatrix, GfglError, TimeSeries};
use serde::{Deserialize, Serialize};

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, unreadable or malformed files (exit 2).
    Input(String),
    /// The solver broke down numerically (exit 3).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<GfglError> for CliError {
    fn from(e: GfglError) -> Self {
        match e {
            GfglError::NumericalFailure { .. }
            | GfglError::UnboundedObjective { .. }
            | GfglError::NotPositiveDefinite { .. }
            | GfglError::Singular { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn input_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

/// Reads a `T×p` table: one row per time point, comma separated, optional
/// header line. A first line with no numeric field is taken as the header.
pub fn read_timeseries(path: &Path) -> CliResult<TimeSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| input_err(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| input_err(path, format!("row {line}: {e}")))?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if i == 0 && record.iter().all(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let mut row = Vec::with_capacity(record.len());
        for (j, field) in record.iter().enumerate() {
            let x: f64 = field.parse().map_err(|_| {
                input_err(path, format!("row {line}, column {}: '{field}' is not a number", j + 1))
            })?;
            if !x.is_finite() {
                return Err(input_err(path, format!("row {line}, column {}: non-finite value '{field}'", j + 1)));
            }
            row.push(x);
        }
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(input_err(
                    path,
                    format!("row {line}, column {}: expected {} columns, found {}", row.len().min(first.len()) + 1, first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(input_err(path, "no data rows"));
    }
    TimeSeries::from_rows(&rows).map_err(|e| input_err(path, e))
}

pub fn write_timeseries(path: &Path, x: &TimeSeries) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| input_err(path, e))?;
    let header: Vec<String> = (1..=x.dim()).map(|j| format!("x{j}")).collect();
    w.write_record(&header).map_err(|e| input_err(path, e))?;
    for t in 0..x.t_len() {
        let row: Vec<String> = x.observation(t).iter().map(|v| v.to_string()).collect();
        w.write_record(&row).map_err(|e| input_err(path, e))?;
    }
    w.flush().map_err(|e| input_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| input_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| input_err(path, e))
}

/// Pretty JSON to `path`, or to stdout without one.
pub fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| input_err(p, e)),
        None => {
            let mut out = io::stdout().lock();
            writeln!(out, "{text}").map_err(|e| CliError::Input(e.to_string()))
        }
    }
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn matrix_of(rows: &[Vec<f64>], what: &str) -> CliResult<DMatrix<f64>> {
    let p = rows.len();
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(CliError::Input(format!("{what} is not a nonempty square matrix")));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfigEcho {
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub max_iter: usize,
    pub segment_start: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct History {
    /// `[primal, dual]` per iteration.
    pub residuals: Vec<(f64, f64)>,
    pub objective: Vec<f64>,
}

/// Document written by `fit` (and by `path --fit-output`), read by `evaluate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDocument {
    pub t_len: usize,
    pub p: usize,
    /// 1-based times at which a new block starts.
    pub changepoints: Vec<usize>,
    /// One row-major `p×p` matrix per block.
    pub block_precisions: Vec<Vec<Vec<f64>>>,
    /// `‖W(t)‖_F` for `t = 1..T`; entry 1 is always 0.
    pub jump_norms: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residuals: Residuals,
    pub config: FitConfigEcho,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<History>,
}

/// Ground truth written by `simulate`, read by `evaluate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthDocument {
    pub spec: SimSpec,
    pub t_len: usize,
    pub p: usize,
    pub changepoints: Vec<usize>,
    pub block_precisions: Vec<Vec<Vec<f64>>>,
    pub block_covariances: Vec<Vec<Vec<f64>>>,
    /// Per block, 0-based pairs `(i, j)` with `i < j`.
    pub edge_sets: Vec<Vec<(usize, usize)>>,
    pub eta_min: Option<f64>,
    pub phi_max: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numerical_failures_exit_with_three() {
        let numeric = [
            GfglError::NumericalFailure { iteration: 4, reason: "x".into() },
            GfglError::UnboundedObjective { iteration: 9 },
            GfglError::NotPositiveDefinite { t: 2 },
        ];
        for e in numeric {
            assert_eq!(CliError::from(e).exit_code(), 3);
        }
        assert_eq!(CliError::from(GfglError::InvalidConfig("bad".into())).exit_code(), 2);
        assert_eq!(CliError::from(GfglError::InvalidInput("bad".into())).exit_code(), 2);
    }

    #[test]
    fn matrix_rows_round_trip() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 2.0]);
        assert_eq!(matrix_of(&rows_of(&m), "m").unwrap(), m);
        assert!(matrix_of(&[vec![1.0, 2.0]], "m").is_err());
    }
}
