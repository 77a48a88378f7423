//! Labelled time series on a shared time grid, plus generators, UCR ingestion
//! and feature scaling.

mod scale;
mod synth;
mod ucr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use scale::{FeatureScaler, AffineMap};
pub use synth::{gen_moons2circles, gen_sincos, Moons2CirclesConfig};
pub use ucr::{load_ucr, read_ucr, write_ucr};

/// One series: `values[l]` is the `d`-dimensional observation at time index `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesInstance {
    pub values: Vec<Vec<f64>>,
    /// `+1` or `-1`.
    pub label: i8,
}

impl TimeSeriesInstance {
    pub fn new(values: Vec<Vec<f64>>, label: i8) -> Result<Self> {
        let inst = TimeSeriesInstance { values, label };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label != 1 && self.label != -1 {
            return Err(Error::usage(format!("label {} is not +1/-1", self.label)));
        }
        let d = self.values.first().map(Vec::len).unwrap_or(0);
        if d == 0 {
            return Err(Error::usage("time series must have p >= 1 and d >= 1"));
        }
        for row in &self.values {
            if row.len() != d {
                return Err(Error::usage("ragged time series"));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::usage("time series contains non-finite values"));
            }
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.values.len()
    }

    pub fn d(&self) -> usize {
        self.values[0].len()
    }

    pub fn y(&self) -> f64 {
        f64::from(self.label)
    }

    /// Observation at time index `l`.
    pub fn at(&self, l: usize) -> &[f64] {
        &self.values[l]
    }
}

/// Sidecar describing a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub times: Vec<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub instances: Vec<TimeSeriesInstance>,
    /// Strictly increasing, one entry per time index.
    pub times: Vec<f64>,
    pub d: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        instances: Vec<TimeSeriesInstance>,
        times: Vec<f64>,
    ) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::usage("dataset needs at least one time point"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::usage("times must be finite and strictly increasing"));
        }
        let d = instances.first().map(|i| i.d()).unwrap_or(0);
        for (k, inst) in instances.iter().enumerate() {
            inst.validate()?;
            if inst.p() != times.len() || inst.d() != d {
                return Err(Error::usage(format!(
                    "instance {k} has shape ({}, {}), expected ({}, {d})",
                    inst.p(),
                    inst.d(),
                    times.len()
                )));
            }
        }
        Ok(Dataset {
            name: name.into(),
            instances,
            times,
            d,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn p(&self) -> usize {
        self.times.len()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.instances.iter().map(TimeSeriesInstance::y).collect()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.instances.iter().filter(|i| i.label == 1).count();
        (pos, self.len() - pos)
    }

    pub fn has_both_classes(&self) -> bool {
        let (pos, neg) = self.class_counts();
        pos > 0 && neg > 0
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            instances: indices.iter().map(|&i| self.instances[i].clone()).collect(),
            times: self.times.clone(),
            d: self.d,
        }
    }

    /// Keep time indices `0, factor, 2 factor, ...`.
    pub fn decimate(&self, factor: usize) -> Result<Dataset> {
        if factor == 0 {
            return Err(Error::usage("decimation factor must be >= 1"));
        }
        if factor > self.p() {
            return Err(Error::usage(format!(
                "decimation factor {factor} exceeds series length {}",
                self.p()
            )));
        }
        let keep: Vec<usize> = (0..self.p()).step_by(factor).collect();
        Ok(Dataset {
            name: self.name.clone(),
            instances: self
                .instances
                .iter()
                .map(|inst| TimeSeriesInstance {
                    values: keep.iter().map(|&l| inst.values[l].clone()).collect(),
                    label: inst.label,
                })
                .collect(),
            times: keep.iter().map(|&l| self.times[l]).collect(),
            d: self.d,
        })
    }

    /// CSV with header `label,t1_f1,t1_f2,...,tp_fd` (time-major), one row per instance.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label");
        for l in 1..=self.p() {
            for f in 1..=self.d {
                out.push_str(&format!(",t{l}_f{f}"));
            }
        }
        out.push('\n');
        for inst in &self.instances {
            out.push_str(&inst.label.to_string());
            for row in &inst.values {
                for v in row {
                    out.push_str(&format!(",{v:?}"));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Parse the output of [`Dataset::to_csv`]; `times` supplies the grid.
    pub fn from_csv(name: &str, text: &str, times: Vec<f64>, d: usize) -> Result<Dataset> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        lines.next().ok_or_else(|| Error::usage("empty dataset CSV"))?;
        let p = times.len();
        let mut instances = Vec::new();
        for (k, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 1 + p * d {
                return Err(Error::usage(format!(
                    "dataset CSV row {} has {} fields, expected {}",
                    k + 1,
                    fields.len(),
                    1 + p * d
                )));
            }
            let parse = |f: &str| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::usage(format!("dataset CSV row {}: {e}", k + 1)))
            };
            let label = parse(fields[0])? as i8;
            let vals = fields[1..].iter().map(|f| parse(f)).collect::<Result<Vec<f64>>>()?;
            let values = vals.chunks(d).map(<[f64]>::to_vec).collect();
            instances.push(TimeSeriesInstance::new(values, label)?);
        }
        Dataset::new(name, instances, times)
    }

    pub fn manifest(&self, seed: Option<u64>) -> DatasetManifest {
        DatasetManifest {
            name: self.name.clone(),
            n: self.len(),
            p: self.p(),
            d: self.d,
            times: self.times.clone(),
            seed,
        }
    }

    /// Check that `other` lives on the same time grid with the same feature dimension.
    pub fn check_compatible(&self, other: &Dataset) -> Result<()> {
        if self.times != other.times || self.d != other.d {
            return Err(Error::usage(format!(
                "datasets {:?} (p={}, d={}) and {:?} (p={}, d={}) do not share a time grid",
                self.name,
                self.p(),
                self.d,
                other.name,
                other.p(),
                other.d
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(p: usize) -> Dataset {
        let inst = |s: f64, y| {
            TimeSeriesInstance::new((0..p).map(|l| vec![s * l as f64]).collect(), y).unwrap()
        };
        Dataset::new(
            "t",
            vec![inst(1.0, 1), inst(2.0, -1)],
            (0..p).map(|l| l as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn decimation() {
        let d = ds(5);
        assert_eq!(d.decimate(1).unwrap(), d);
        let d2 = d.decimate(2).unwrap();
        assert_eq!(d2.times, vec![0.0, 2.0, 4.0]);
        assert_eq!(d2.instances[1].values, vec![vec![0.0], vec![4.0], vec![8.0]]);
        assert!(d.decimate(6).is_err());
        assert!(d.decimate(0).is_err());
        assert_eq!(ds(150).decimate(3).unwrap().p(), 50);
    }

    #[test]
    fn validation() {
        assert!(TimeSeriesInstance::new(vec![vec![f64::NAN]], 1).is_err());
        assert!(TimeSeriesInstance::new(vec![vec![1.0]], 0).is_err());
        assert!(TimeSeriesInstance::new(vec![vec![1.0], vec![]], 1).is_err());
        let i = TimeSeriesInstance::new(vec![vec![1.0]], 1).unwrap();
        assert!(Dataset::new("x", vec![i.clone()], vec![1.0, 0.5]).is_err());
        assert!(Dataset::new("x", vec![i], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = ds(3);
        let csv = d.to_csv();
        assert!(csv.starts_with("label,t1_f1,t2_f1,t3_f1\n"));
        let back = Dataset::from_csv("t", &csv, d.times.clone(), 1).unwrap();
        assert_eq!(back, d);
    }
}
