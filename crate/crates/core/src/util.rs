//! Small numeric and I/O helpers shared across modules.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// SplitMix64 finalizer.
pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a base seed and a coordinate tuple.
pub fn mix_seed(seed: u64, tag: &[u64]) -> u64 {
    tag.iter().fold(splitmix(seed), |acc, &t| {
        splitmix(acc.rotate_left(29) ^ splitmix(t ^ 0xD1B5_4A32_D192_ED03))
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>, tol: f64, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::usage(format!("{what} is {}x{}, not square", m.nrows(), m.ncols())));
    }
    let asym = (m - m.transpose()).amax();
    if asym > tol {
        return Err(Error::usage(format!("{what} is not symmetric (max asymmetry {asym:e})")));
    }
    Ok(())
}

pub(crate) fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                s.push(',');
            }
            write!(s, "{:?}", m[(i, j)]).expect("write to String");
        }
        s.push('\n');
    }
    s
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_text(path, &matrix_csv(m))
}

/// Parse a headerless numeric CSV matrix.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Ingestion {
                path: path.to_path_buf(),
                line: k + 1,
                msg: e.to_string(),
            })?;
        if rows.first().is_some_and(|r| r.len() != row.len()) {
            return Err(Error::Ingestion {
                path: path.to_path_buf(),
                line: k + 1,
                msg: "ragged row".into(),
            });
        }
        rows.push(row);
    }
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.into_iter().flatten(),
    ))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
