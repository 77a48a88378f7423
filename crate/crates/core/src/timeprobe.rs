//! Embedding-overlap probe `F(dt) = |<0| exp(-i H dt) |0>|^2` of a learned
//! evolution, where `H = W^dagger (sum_S gamma_S Z_S) W`.
//!
//! `F` measures how far the evolution moves the reference state over a time
//! lag `dt`, independent of any data: a flat `F = 1` means the kernel is
//! effectively time independent.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{build_time_evolution, AnsatzSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub deltas: Vec<f64>,
    pub values: Vec<f64>,
    /// `(t, F(t))` at the training time stamps.
    pub markers: Vec<(f64, f64)>,
}

impl ProbeResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("delta,overlap\n");
        for (d, v) in self.deltas.iter().zip(&self.values) {
            s.push_str(&format!("{d:?},{v:?}\n"));
        }
        s
    }

    pub fn markers_csv(&self) -> String {
        let mut s = String::from("t,overlap\n");
        for (t, v) in &self.markers {
            s.push_str(&format!("{t:?},{v:?}\n"));
        }
        s
    }
}

fn overlap(spec: &AnsatzSpec, beta: &[f64], gamma: &[f64], dt: f64) -> Result<f64> {
    Ok(build_time_evolution(spec, beta, gamma, dt)?.prob_all_zeros())
}

/// `F` at each lag in `deltas`, plus markers at `marker_times`.
pub fn probe(
    spec: &AnsatzSpec,
    beta: &[f64],
    gamma: &[f64],
    deltas: &[f64],
    marker_times: &[f64],
) -> Result<ProbeResult> {
    if deltas.iter().chain(marker_times).any(|d| !d.is_finite()) {
        return Err(Error::usage("probe lags must be finite"));
    }
    let values = deltas
        .par_iter()
        .map(|&d| overlap(spec, beta, gamma, d))
        .collect::<Result<Vec<_>>>()?;
    let markers = marker_times
        .iter()
        .map(|&t| Ok((t, overlap(spec, beta, gamma, t)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeResult {
        deltas: deltas.to_vec(),
        values,
        markers,
    })
}

/// `count` evenly spaced lags on `[0, max]`.
pub fn delta_grid(max: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 || !(max > 0.0) {
        return Err(Error::config("probe grid needs count >= 2 and max > 0"));
    }
    Ok((0..count).map(|k| max * k as f64 / (count - 1) as f64).collect())
}
