//! Regression metrics, prediction inclusion ratio and embedding-similarity
//! diagnostics.

use nalgebra::DMatrix;
use thiserror::Error;

/// Default half-width of a target energy range, eV.
pub const DEFAULT_PIR_TOLERANCE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no values")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("targets are constant; R² is undefined")]
    ConstantTargets,
    #[error("row {0} has zero norm")]
    ZeroNormRow(usize),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("need at least 2 rows, got {0}")]
    TooSmall(usize),
    #[error("range lower bound {lo} exceeds upper bound {hi}")]
    BadRange { lo: f64, hi: f64 },
}

pub fn mae(preds: &[f64], targets: &[f64]) -> Result<f64, MetricsError> {
    check_lengths(preds.len(), targets.len())?;
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum::<f64>() / preds.len() as f64)
}

/// `(MAE, R²)` with `R² = 1 - SS_res / SS_tot`.
pub fn mae_r2(preds: &[f64], targets: &[f64]) -> Result<(f64, f64), MetricsError> {
    let m = mae(preds, targets)?;
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::ConstantTargets);
    }
    let ss_res: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((m, 1.0 - ss_res / ss_tot))
}

fn check_lengths(a: usize, b: usize) -> Result<(), MetricsError> {
    if a != b {
        return Err(MetricsError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Inclusive target energy range for one system, eV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PirSpec {
    pub lo: f64,
    pub hi: f64,
}

impl PirSpec {
    pub fn new(lo: f64, hi: f64) -> Result<Self, MetricsError> {
        if lo <= hi {
            Ok(Self { lo, hi })
        } else {
            Err(MetricsError::BadRange { lo, hi })
        }
    }

    /// `[e_min - tolerance, e_min + tolerance]`.
    pub fn around_minimum(e_min: f64, tolerance: f64) -> Self {
        Self {
            lo: e_min - tolerance.abs(),
            hi: e_min + tolerance.abs(),
        }
    }

    pub fn contains(&self, e: f64) -> bool {
        self.lo <= e && e <= self.hi
    }
}

/// Percentage of predictions inside their system's range.
pub fn pir(preds: &[f64], ranges: &[PirSpec]) -> Result<f64, MetricsError> {
    check_lengths(preds.len(), ranges.len())?;
    let hits = preds.iter().zip(ranges).filter(|(p, r)| r.contains(**p)).count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

fn row_normalized(m: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricsError> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        let n = row.norm();
        if n == 0.0 {
            return Err(MetricsError::ZeroNormRow(i));
        }
        row /= n;
    }
    Ok(out)
}

/// Cosine similarities, rows from `geo`, columns from `text`.
pub fn similarity_matrix(geo: &DMatrix<f64>, text: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricsError> {
    if geo.shape() != text.shape() {
        return Err(MetricsError::ShapeMismatch(geo.shape(), text.shape()));
    }
    let s = row_normalized(geo)? * row_normalized(text)?.transpose();
    Ok(s.map(|x| x.clamp(-1.0, 1.0)))
}

/// Mean of the diagonal minus mean of the off-diagonal entries.
pub fn diagonal_dominance(s: &DMatrix<f64>) -> Result<f64, MetricsError> {
    let n = s.nrows();
    if n < 2 || s.ncols() != n {
        return Err(MetricsError::TooSmall(n.min(s.ncols())));
    }
    let diag: f64 = s.diagonal().sum();
    let off = s.sum() - diag;
    Ok(diag / n as f64 - off / (n * (n - 1)) as f64)
}

/// Percentage of rows whose first maximum sits on the diagonal.
pub fn retrieval_top1(s: &DMatrix<f64>) -> f64 {
    let n = s.nrows();
    if n == 0 {
        return 0.0;
    }
    let hits = (0..n)
        .filter(|&i| {
            let row = s.row(i);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best == i
        })
        .count();
    100.0 * hits as f64 / n as f64
}

/// Cosine self-similarity of a set of embeddings.
pub fn autocorrelation_heatmap(embs: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricsError> {
    let u = row_normalized(embs)?;
    let mut s = &u * u.transpose();
    let n = s.nrows();
    for i in 0..n {
        s[(i, i)] = 1.0;
        for j in 0..i {
            let v = s[(i, j)].clamp(-1.0, 1.0);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(s)
}

/// Row-major CSV with a header row of column indices.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let header: Vec<String> = (0..m.ncols()).map(|j| j.to_string()).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}
