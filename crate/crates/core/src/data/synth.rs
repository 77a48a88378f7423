//! Synthetic datasets: moons morphing into circles, and the sine/cosine toy.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, TimeSeriesInstance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Moons2CirclesConfig {
    pub n_instances: usize,
    pub p: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for Moons2CirclesConfig {
    fn default() -> Self {
        Moons2CirclesConfig {
            n_instances: 100,
            p: 10,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

/// Upper moon (class +1) or lower moon (class -1) at parameter `angle` in `[0, pi]`.
pub(crate) fn moon_point(label: i8, angle: f64) -> [f64; 2] {
    if label == 1 {
        [angle.cos(), angle.sin()]
    } else {
        [1.0 - angle.cos(), 1.0 - angle.sin() - 0.5]
    }
}

/// Inner circle of radius 0.5 (class +1) or outer circle of radius 1 (class -1).
pub(crate) fn circle_point(label: i8, angle: f64) -> [f64; 2] {
    let r = if label == 1 { 0.5 } else { 1.0 };
    [r * angle.cos(), r * angle.sin()]
}

/// Each series starts on a moon and ends on a circle of the same class, linearly
/// interpolated over `p` equally spaced times on `[0, 1]`. Within a class, moon
/// and circle points are paired by rank of their sampled angles.
pub fn gen_moons2circles(cfg: &Moons2CirclesConfig) -> Result<Dataset> {
    if cfg.n_instances == 0 || cfg.n_instances % 2 != 0 {
        return Err(Error::usage(format!(
            "n_instances = {} must be positive and even",
            cfg.n_instances
        )));
    }
    if cfg.p < 2 {
        return Err(Error::usage("moons2circles needs p >= 2"));
    }
    if !(cfg.noise_std >= 0.0) {
        return Err(Error::usage("noise_std must be nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std).expect("finite nonnegative std");
    let per_class = cfg.n_instances / 2;
    let times: Vec<f64> = (0..cfg.p).map(|l| l as f64 / (cfg.p - 1) as f64).collect();

    let mut by_class: Vec<Vec<TimeSeriesInstance>> = Vec::new();
    for label in [1i8, -1] {
        let mut moon_angles: Vec<f64> = (0..per_class).map(|_| rng.random_range(0.0..=PI)).collect();
        let mut circle_angles: Vec<f64> =
            (0..per_class).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        moon_angles.sort_by(f64::total_cmp);
        circle_angles.sort_by(f64::total_cmp);
        let mut series = Vec::with_capacity(per_class);
        for (&ma, &ca) in moon_angles.iter().zip(&circle_angles) {
            let mut m = moon_point(label, ma);
            let mut c = circle_point(label, ca);
            for v in m.iter_mut().chain(c.iter_mut()) {
                *v += noise.sample(&mut rng);
            }
            let values = times
                .iter()
                .map(|&s| vec![(1.0 - s) * m[0] + s * c[0], (1.0 - s) * m[1] + s * c[1]])
                .collect();
            series.push(TimeSeriesInstance { values, label });
        }
        by_class.push(series);
    }
    let neg = by_class.pop().expect("two classes");
    let pos = by_class.pop().expect("two classes");
    let instances = pos
        .into_iter()
        .zip(neg)
        .flat_map(|(a, b)| [a, b])
        .collect();
    Dataset::new("moons2circles", instances, times)
}

/// Two univariate series on an even grid over `[0, pi]`: `-sin(t)` labelled +1
/// and `-cos(t)` labelled -1. The seed is accepted for interface symmetry; the
/// output is deterministic.
pub fn gen_sincos(p: usize, _seed: u64) -> Result<Dataset> {
    if p < 2 {
        return Err(Error::usage("sincos needs p >= 2"));
    }
    let times: Vec<f64> = (0..p).map(|l| PI * l as f64 / (p - 1) as f64).collect();
    let sin = TimeSeriesInstance::new(times.iter().map(|t| vec![-t.sin()]).collect(), 1)?;
    let cos = TimeSeriesInstance::new(times.iter().map(|t| vec![-t.cos()]).collect(), -1)?;
    Dataset::new("sincos", vec![sin, cos], times)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moons2circles_shape_and_balance() {
        let ds = gen_moons2circles(&Moons2CirclesConfig::default()).unwrap();
        assert_eq!(ds.len(), 100);
        assert_eq!(ds.p(), 10);
        assert_eq!(ds.d, 2);
        assert_eq!(ds.class_counts(), (50, 50));
        assert_eq!(ds.times[0], 0.0);
        assert_eq!(*ds.times.last().unwrap(), 1.0);
        let again = gen_moons2circles(&Moons2CirclesConfig::default()).unwrap();
        assert_eq!(ds, again);
        assert!(gen_moons2circles(&Moons2CirclesConfig {
            n_instances: 7,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn noiseless_endpoints_lie_on_generators() {
        let cfg = Moons2CirclesConfig {
            n_instances: 20,
            p: 2,
            noise_std: 0.0,
            seed: 9,
        };
        let ds = gen_moons2circles(&cfg).unwrap();
        for inst in &ds.instances {
            let (m, c) = (inst.at(0), inst.at(1));
            if inst.label == 1 {
                assert!(((m[0] * m[0] + m[1] * m[1]).sqrt() - 1.0).abs() < 1e-12);
                assert!(m[1] >= -1e-12);
                assert!(((c[0] * c[0] + c[1] * c[1]).sqrt() - 0.5).abs() < 1e-12);
            } else {
                let (dx, dy) = (m[0] - 1.0, m[1] - 0.5);
                assert!(((dx * dx + dy * dy).sqrt() - 1.0).abs() < 1e-12);
                assert!(m[1] <= 0.5 + 1e-12);
                assert!(((c[0] * c[0] + c[1] * c[1]).sqrt() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sincos_values() {
        let ds = gen_sincos(3, 0).unwrap();
        assert_eq!(ds.labels(), vec![1.0, -1.0]);
        assert_eq!(ds.instances[0].at(0), &[-0.0]);
        assert_eq!(ds.instances[1].at(0), &[-1.0]);
        for (l, &t) in ds.times.iter().enumerate() {
            assert!((ds.instances[0].at(l)[0] + t.sin()).abs() < 1e-15);
            assert!((ds.instances[1].at(l)[0] + t.cos()).abs() < 1e-15);
        }
        assert!((ds.times[2] - PI).abs() < 1e-15);
    }
}
