use serde::{Deserialize, Serialize};

use super::{Dataset, TimeSeriesInstance};
use crate::error::{Error, Result};

/// `v -> scale * v + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub scale: f64,
    pub offset: f64,
}

impl AffineMap {
    pub fn apply(&self, v: f64) -> f64 {
        self.scale * v + self.offset
    }
}

/// Per-feature affine maps sending the training range onto an embedding range.
///
/// Out-of-range test values are extrapolated, never clipped: the angle
/// embeddings are periodic and clipping would fold distinct points together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub maps: Vec<AffineMap>,
    /// Target range; `None` for the identity scaler.
    pub range: Option<(f64, f64)>,
}

impl FeatureScaler {
    pub fn identity(d: usize) -> Self {
        FeatureScaler {
            maps: vec![
                AffineMap {
                    scale: 1.0,
                    offset: 0.0
                };
                d
            ],
            range: None,
        }
    }

    /// Fit on every observation of `train`. A constant feature maps to the
    /// midpoint of the range.
    pub fn fit(train: &Dataset, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::config(format!("scaling range [{lo}, {hi}] is empty")));
        }
        if train.is_empty() {
            return Err(Error::usage("cannot fit a scaler on an empty dataset"));
        }
        let mut maps = Vec::with_capacity(train.d);
        for f in 0..train.d {
            let (mut mn, mut mx) = (f64::INFINITY, f64::NEG_INFINITY);
            for inst in &train.instances {
                for row in &inst.values {
                    mn = mn.min(row[f]);
                    mx = mx.max(row[f]);
                }
            }
            if mx > mn {
                let scale = (hi - lo) / (mx - mn);
                maps.push(AffineMap {
                    scale,
                    offset: lo - scale * mn,
                });
            } else {
                log::warn!("feature {f} is constant ({mn}) on the training set; mapping to midpoint");
                maps.push(AffineMap {
                    scale: 0.0,
                    offset: 0.5 * (lo + hi),
                });
            }
        }
        Ok(FeatureScaler {
            maps,
            range: Some((lo, hi)),
        })
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        if ds.d != self.maps.len() {
            return Err(Error::usage(format!(
                "scaler fitted on d={} applied to d={}",
                self.maps.len(),
                ds.d
            )));
        }
        let instances = ds
            .instances
            .iter()
            .map(|inst| TimeSeriesInstance {
                values: inst
                    .values
                    .iter()
                    .map(|row| row.iter().zip(&self.maps).map(|(&v, m)| m.apply(v)).collect())
                    .collect(),
                label: inst.label,
            })
            .collect();
        Ok(Dataset {
            name: ds.name.clone(),
            instances,
            times: ds.times.clone(),
            d: ds.d,
        })
    }
}
