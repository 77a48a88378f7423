//! UCR archive text format: one instance per line, class label first, then the
//! `p` observations. Fields are tab- or comma-separated (detected per file).
//! Class `1` maps to `+1` and class `2` to `-1`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Dataset, TimeSeriesInstance};
use crate::error::{Error, Result};

fn parse_label(field: &str) -> Option<i8> {
    let v: f64 = field.trim().parse().ok()?;
    if v == 1.0 {
        Some(1)
    } else if v == 2.0 {
        Some(-1)
    } else {
        None
    }
}

/// Read one UCR split. Times are `l / p` for `l = 1..=p`.
pub fn read_ucr(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let delim = if text.contains('\t') { '\t' } else { ',' };
    let mut instances = Vec::new();
    let mut p: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Ingestion {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let mut fields = line.split(delim).map(str::trim).filter(|f| !f.is_empty());
        let label_field = fields.next().ok_or_else(|| err("empty record".into()))?;
        let label = parse_label(label_field)
            .ok_or_else(|| err(format!("unknown class label {label_field:?}")))?;
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("non-numeric value {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.is_empty() {
            return Err(err("record has no observations".into()));
        }
        match p {
            None => p = Some(values.len()),
            Some(expected) if expected != values.len() => {
                return Err(err(format!(
                    "ragged row: {} values, expected {expected}",
                    values.len()
                )))
            }
            _ => {}
        }
        instances.push(TimeSeriesInstance {
            values: values.into_iter().map(|v| vec![v]).collect(),
            label,
        });
    }
    let p = p.ok_or_else(|| Error::Ingestion {
        path: path.to_path_buf(),
        line: 0,
        msg: "file contains no records".into(),
    })?;
    let times = (1..=p).map(|l| l as f64 / p as f64).collect();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "ucr".into());
    Dataset::new(name, instances, times)
}

/// Read a train/test pair and check they share a time grid.
pub fn load_ucr(train_path: &Path, test_path: &Path) -> Result<(Dataset, Dataset)> {
    let train = read_ucr(train_path)?;
    let test = read_ucr(test_path)?;
    train.check_compatible(&test)?;
    Ok((train, test))
}

/// Write a univariate dataset back in tab-separated UCR form.
pub fn write_ucr(ds: &Dataset, path: &Path) -> Result<()> {
    if ds.d != 1 {
        return Err(Error::usage("UCR text format holds univariate series only"));
    }
    let mut out = Vec::new();
    for inst in &ds.instances {
        let label = if inst.label == 1 { "1" } else { "2" };
        write!(out, "{label}").expect("write to Vec");
        for row in &inst.values {
            // `{:?}` prints the shortest representation that round-trips exactly.
            write!(out, "\t{:?}", row[0]).expect("write to Vec");
        }
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
