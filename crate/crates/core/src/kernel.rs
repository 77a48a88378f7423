//! Time-dependent fidelity kernels, Gram stacks and the weighted combination.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{
    build_eigenvector_circuit, build_embedding, build_time_evolution, prob_zero_and_gradient,
    AnsatzSpec, Circuit, ParameterSet,
};
use crate::data::{Dataset, FeatureScaler, TimeSeriesInstance};
use crate::error::{Error, Result};
use crate::util::{mix_seed, write_json, write_matrix_csv};

/// How a kernel element is read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum KernelMode {
    /// Exact all-zeros probability from the statevector.
    Exact,
    /// Fraction of all-zeros outcomes among `count` samples. Each element uses
    /// its own stream derived from `seed` and the element coordinates.
    Shots { count: u64, seed: u64 },
}

/// Maps dataset time stamps to the evolution time fed to `D(gamma, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeMap {
    pub scale: f64,
    /// Use this evolution time for every slice (time-independent ablation).
    pub fixed: Option<f64>,
}

impl Default for TimeMap {
    fn default() -> Self {
        TimeMap {
            scale: 1.0,
            fixed: None,
        }
    }
}

impl TimeMap {
    pub fn evolution_time(&self, t: f64) -> f64 {
        self.fixed.unwrap_or(self.scale * t)
    }

    pub fn evolution_times(&self, times: &[f64]) -> Vec<f64> {
        times.iter().map(|&t| self.evolution_time(t)).collect()
    }
}

/// Per-time Gram matrices `K_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramStack {
    pub times: Vec<f64>,
    pub mats: Vec<DMatrix<f64>>,
    pub mode: KernelMode,
}

impl GramStack {
    pub fn p(&self) -> usize {
        self.mats.len()
    }

    pub fn n(&self) -> usize {
        self.mats.first().map(|m| m.nrows()).unwrap_or(0)
    }

    /// `K_e = sum_t K_t`.
    pub fn equal_sum(&self) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(self.n(), self.n());
        for m in &self.mats {
            acc += m;
        }
        acc
    }

    /// One `gram_tNNN.csv` per slice plus `manifest.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        for (l, m) in self.mats.iter().enumerate() {
            let name = format!("gram_t{l:03}.csv");
            write_matrix_csv(&dir.join(&name), m)?;
            files.push(name);
        }
        let (mode, shots, seed) = match self.mode {
            KernelMode::Exact => ("exact", None, None),
            KernelMode::Shots { count, seed } => ("shots", Some(count), Some(seed)),
        };
        let manifest = serde_json::json!({
            "times": self.times,
            "n": self.n(),
            "p": self.p(),
            "mode": mode,
            "shots": shots,
            "seed": seed,
            "files": files,
        });
        write_json(&dir.join("manifest.json"), &manifest)
    }
}

/// Simplex weights `eta` over the time slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KernelWeights(Vec<f64>);

impl KernelWeights {
    /// Clamp entries above `-1e-12` to zero and renormalize to unit sum.
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::usage("kernel weights cannot be empty"));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::usage("kernel weights must be finite"));
        }
        let clamped: Vec<f64> = raw.into_iter().map(|v| v.max(0.0)).collect();
        let total: f64 = clamped.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateKernel(
                "kernel weights sum to zero after clamping".into(),
            ));
        }
        Ok(KernelWeights(clamped.into_iter().map(|v| v / total).collect()))
    }

    pub fn uniform(p: usize) -> Self {
        KernelWeights(vec![1.0 / p as f64; p])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A trained kernel: circuit structure, angles, weights and preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedTshk {
    pub spec: AnsatzSpec,
    pub theta: ParameterSet,
    pub eta: KernelWeights,
    /// Dataset time stamps the kernel was trained on.
    pub times: Vec<f64>,
    pub time_map: TimeMap,
    pub scaler: FeatureScaler,
    pub seed: u64,
}

impl TrainedTshk {
    pub fn evolution_times(&self) -> Vec<f64> {
        self.time_map.evolution_times(&self.times)
    }

    /// Check a (scaled) dataset against the model's grid and feature count.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.times.len() != self.times.len()
            || ds.times.iter().zip(&self.times).any(|(a, b)| (a - b).abs() > 1e-12)
            || ds.d != self.spec.n_features
        {
            return Err(Error::usage(format!(
                "dataset (p={}, d={}) does not match model (p={}, d={})",
                ds.p(),
                ds.d,
                self.times.len(),
                self.spec.n_features
            )));
        }
        Ok(())
    }
}

/// Circuits shared by every element of one parameter setting: `V_t` and
/// `V_t^dagger` per slice.
pub(crate) struct KernelCircuits<'a> {
    spec: &'a AnsatzSpec,
    theta: &'a ParameterSet,
    v: Vec<(Circuit, Circuit)>,
}

impl<'a> KernelCircuits<'a> {
    pub(crate) fn new(spec: &'a AnsatzSpec, theta: &'a ParameterSet, times: &[f64]) -> Result<Self> {
        theta.check(spec)?;
        // validates beta once
        build_eigenvector_circuit(spec, &theta.beta)?;
        let v = times
            .iter()
            .map(|&t| {
                let v = build_time_evolution(spec, &theta.beta, &theta.gamma, t)?;
                let adj = v.adjoint();
                Ok((v, adj))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(KernelCircuits { spec, theta, v })
    }

    pub(crate) fn circuit(&self, l: usize, x: &[f64], x_prime: &[f64]) -> Result<Circuit> {
        let (v, v_adj) = &self.v[l];
        let mut c = v.clone();
        c.append(&build_embedding(self.spec, x, &self.theta.alpha)?)?;
        c.append(&build_embedding(self.spec, x_prime, &self.theta.alpha)?.adjoint())?;
        c.append(v_adj)?;
        Ok(c)
    }

    pub(crate) fn value(&self, l: usize, x: &[f64], x_prime: &[f64], mode: KernelMode, tag: [u64; 4]) -> Result<f64> {
        let c = self.circuit(l, x, x_prime)?;
        readout(&c, mode, tag)
    }

    pub(crate) fn value_and_gradient(&self, l: usize, x: &[f64], x_prime: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok(prob_zero_and_gradient(&self.circuit(l, x, x_prime)?))
    }
}

fn readout(c: &Circuit, mode: KernelMode, tag: [u64; 4]) -> Result<f64> {
    match mode {
        KernelMode::Exact => Ok(c.prob_all_zeros()),
        KernelMode::Shots { count, seed } => {
            let state = c.run();
            let counts = state.sample_counts(count, mix_seed(seed, &tag))?;
            let zeros = "0".repeat(state.n_qubits());
            Ok(counts.get(&zeros) as f64 / count as f64)
        }
    }
}

/// `kappa_t(x, x')` for one pair at evolution time `t`.
pub fn kappa_t(
    spec: &AnsatzSpec,
    theta: &ParameterSet,
    x: &[f64],
    x_prime: &[f64],
    t: f64,
    mode: KernelMode,
) -> Result<f64> {
    let kc = KernelCircuits::new(spec, theta, &[t])?;
    kc.value(0, x, x_prime, mode, [0, 0, 0, 0])
}

fn check_grid(instances: &[TimeSeriesInstance], p: usize, d: usize) -> Result<()> {
    for (k, inst) in instances.iter().enumerate() {
        if inst.p() != p || inst.d() != d {
            return Err(Error::usage(format!(
                "instance {k} has shape ({}, {}) but the time grid has p={p}, d={d}",
                inst.p(),
                inst.d()
            )));
        }
    }
    Ok(())
}

/// Upper-triangle index pairs `(i, j)` with `i < j`.
pub(crate) fn upper_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// `K_t[i][j] = kappa_t(x_i(t), x_j(t))` for every slice. `times` are evolution
/// times, one per time index of the instances. Only `i < j` is evaluated; the
/// diagonal is pinned to 1 (an identical pair returns to `|0...0>` exactly, so
/// sampling it would only ever yield all zeros).
pub fn gram_stack(
    spec: &AnsatzSpec,
    theta: &ParameterSet,
    instances: &[TimeSeriesInstance],
    times: &[f64],
    mode: KernelMode,
) -> Result<GramStack> {
    check_grid(instances, times.len(), spec.n_features)?;
    let kc = KernelCircuits::new(spec, theta, times)?;
    let n = instances.len();
    let pairs = upper_pairs(n);
    let cells: Vec<(usize, usize, usize)> = (0..times.len())
        .flat_map(|l| pairs.iter().map(move |&(i, j)| (l, i, j)))
        .collect();
    let values = cells
        .par_iter()
        .map(|&(l, i, j)| {
            kc.value(
                l,
                instances[i].at(l),
                instances[j].at(l),
                mode,
                [0, l as u64, i as u64, j as u64],
            )
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut mats: Vec<DMatrix<f64>> = (0..times.len()).map(|_| DMatrix::identity(n, n)).collect();
    for (&(l, i, j), v) in cells.iter().zip(values) {
        mats[l][(i, j)] = v;
        mats[l][(j, i)] = v;
    }
    Ok(GramStack {
        times: times.to_vec(),
        mats,
        mode,
    })
}

/// Kernel programs for slice `l` of `instances`, one per upper-triangle pair
/// `(i, j)` with `i < j`, evolved for time `t`.
pub fn slice_circuits(
    spec: &AnsatzSpec,
    theta: &ParameterSet,
    instances: &[TimeSeriesInstance],
    l: usize,
    t: f64,
) -> Result<Vec<((usize, usize), Circuit)>> {
    let p = instances.first().map(TimeSeriesInstance::p).unwrap_or(0);
    if l >= p {
        return Err(Error::usage(format!("slice {l} outside a grid of {p} times")));
    }
    check_grid(instances, p, spec.n_features)?;
    let kc = KernelCircuits::new(spec, theta, &[t])?;
    upper_pairs(instances.len())
        .into_iter()
        .map(|(i, j)| Ok(((i, j), kc.circuit(0, instances[i].at(l), instances[j].at(l))?)))
        .collect()
}

/// `sum_t eta_t K_t`.
pub fn combined_kernel(mats: &[DMatrix<f64>], eta: &KernelWeights) -> Result<DMatrix<f64>> {
    if mats.len() != eta.len() {
        return Err(Error::usage(format!(
            "{} kernel weights for {} Gram matrices",
            eta.len(),
            mats.len()
        )));
    }
    let (r, c) = mats.first().map(|m| m.shape()).unwrap_or((0, 0));
    let mut acc = DMatrix::zeros(r, c);
    for (m, &w) in mats.iter().zip(eta.as_slice()) {
        if m.shape() != (r, c) {
            return Err(Error::usage("Gram matrices differ in shape"));
        }
        acc += m * w;
    }
    Ok(acc)
}

/// Per-slice test-vs-train kernels (rows = test, columns = train) and their
/// `eta`-weighted combination. Both datasets must already be scaled.
pub fn cross_gram(
    tshk: &TrainedTshk,
    train: &[TimeSeriesInstance],
    test: &[TimeSeriesInstance],
    mode: KernelMode,
) -> Result<(Vec<DMatrix<f64>>, DMatrix<f64>)> {
    let times = tshk.evolution_times();
    check_grid(train, times.len(), tshk.spec.n_features)?;
    check_grid(test, times.len(), tshk.spec.n_features)?;
    let kc = KernelCircuits::new(&tshk.spec, &tshk.theta, &times)?;
    let (m, n) = (test.len(), train.len());
    let cells: Vec<(usize, usize, usize)> = (0..times.len())
        .flat_map(|l| (0..m).flat_map(move |i| (0..n).map(move |j| (l, i, j))))
        .collect();
    let values = cells
        .par_iter()
        .map(|&(l, i, j)| {
            kc.value(
                l,
                test[i].at(l),
                train[j].at(l),
                mode,
                [1, l as u64, i as u64, j as u64],
            )
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut mats: Vec<DMatrix<f64>> = (0..times.len()).map(|_| DMatrix::zeros(m, n)).collect();
    for (&(l, i, j), v) in cells.iter().zip(values) {
        mats[l][(i, j)] = v;
    }
    let combined = combined_kernel(&mats, &tshk.eta)?;
    Ok((mats, combined))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::build_kernel_circuit;
    use crate::util::min_eigenvalue;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_instances(rng: &mut impl Rng, n: usize, p: usize, d: usize) -> Vec<TimeSeriesInstance> {
        (0..n)
            .map(|k| TimeSeriesInstance {
                values: (0..p)
                    .map(|_| (0..d).map(|_| rng.random_range(0.0..PI)).collect())
                    .collect(),
                label: if k % 2 == 0 { 1 } else { -1 },
            })
            .collect()
    }

    #[test]
    fn kappa_identities() {
        let spec = AnsatzSpec::qaoa_sel(2, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..100 {
            let th = ParameterSet::random(&spec, &mut rng);
            let x = [rng.random_range(0.0..PI), rng.random_range(0.0..PI)];
            let y = [rng.random_range(0.0..PI), rng.random_range(0.0..PI)];
            let t = rng.random_range(0.0..2.0);
            let a = kappa_t(&spec, &th, &x, &y, t, KernelMode::Exact).unwrap();
            let b = kappa_t(&spec, &th, &y, &x, t, KernelMode::Exact).unwrap();
            assert!((a - b).abs() <= 1e-12);
            assert!((-1e-15..=1.0 + 1e-12).contains(&a));
            let s = kappa_t(&spec, &th, &x, &x, t, KernelMode::Exact).unwrap();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn kappa_closed_form_single_qubit() {
        let spec = AnsatzSpec::ry_sel(1, 1, 1).unwrap();
        let th = ParameterSet::zeros(&spec);
        let k = kappa_t(&spec, &th, &[0.0], &[PI / 2.0], 0.3, KernelMode::Exact).unwrap();
        assert!((k - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gram_singletons_and_duplicates() {
        let spec = AnsatzSpec::qaoa_sel(2, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let th = ParameterSet::random(&spec, &mut rng);
        let inst = random_instances(&mut rng, 1, 3, 1);
        let g = gram_stack(&spec, &th, &inst, &[0.1, 0.2, 0.3], KernelMode::Exact).unwrap();
        assert!(g.mats.iter().all(|m| m.shape() == (1, 1) && m[(0, 0)] == 1.0));
        let dup = vec![inst[0].clone(), inst[0].clone()];
        let g = gram_stack(&spec, &th, &dup, &[0.1, 0.2, 0.3], KernelMode::Exact).unwrap();
        for m in &g.mats {
            assert!(m.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
        assert!(gram_stack(&spec, &th, &inst, &[0.1, 0.2], KernelMode::Exact).is_err());
    }

    #[test]
    fn gram_matches_brute_force() {
        let spec = AnsatzSpec::qaoa_sel(3, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let th = ParameterSet::random(&spec, &mut rng);
        let inst = random_instances(&mut rng, 3, 4, 2);
        let times = [0.0, 0.3, 0.7, 1.0];
        let g = gram_stack(&spec, &th, &inst, &times, KernelMode::Exact).unwrap();
        for (l, &t) in times.iter().enumerate() {
            for i in 0..3 {
                for j in 0..3 {
                    let c = build_kernel_circuit(&spec, inst[i].at(l), inst[j].at(l), &th, t).unwrap();
                    assert!((g.mats[l][(i, j)] - c.prob_all_zeros()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gram_psd_and_symmetric() {
        let spec = AnsatzSpec::qaoa_sel(3, 2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let th = ParameterSet::random(&spec, &mut rng);
        let inst = random_instances(&mut rng, 20, 2, 2);
        let g = gram_stack(&spec, &th, &inst, &[0.2, 0.9], KernelMode::Exact).unwrap();
        for m in &g.mats {
            assert!((m - m.transpose()).amax() <= 1e-12);
            assert!(min_eigenvalue(m) >= -1e-9);
        }
        let eta = KernelWeights::new(vec![0.3, 0.7]).unwrap();
        assert!(min_eigenvalue(&combined_kernel(&g.mats, &eta).unwrap()) >= -1e-9);
    }

    #[test]
    fn shots_consistency() {
        let spec = AnsatzSpec::qaoa_sel(2, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let shots = 100_000;
        for k in 0..50 {
            let th = ParameterSet::random(&spec, &mut rng);
            let x = [rng.random_range(0.0..PI)];
            let y = [rng.random_range(0.0..PI)];
            let exact = kappa_t(&spec, &th, &x, &y, 0.5, KernelMode::Exact).unwrap();
            let est = kappa_t(
                &spec,
                &th,
                &x,
                &y,
                0.5,
                KernelMode::Shots {
                    count: shots,
                    seed: k,
                },
            )
            .unwrap();
            let bound = 5.0 * (exact * (1.0 - exact) / shots as f64).sqrt();
            assert!((est - exact).abs() <= bound.max(1e-12), "est {est} exact {exact}");
        }
    }

    #[test]
    fn shot_mode_seed_deterministic() {
        let spec = AnsatzSpec::qaoa_sel(2, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let th = ParameterSet::random(&spec, &mut rng);
        let inst = random_instances(&mut rng, 4, 2, 1);
        let mode = KernelMode::Shots { count: 500, seed: 3 };
        let a = gram_stack(&spec, &th, &inst, &[0.1, 0.5], mode).unwrap();
        let b = gram_stack(&spec, &th, &inst, &[0.1, 0.5], mode).unwrap();
        assert_eq!(a, b);
        for m in &a.mats {
            assert!((m - m.transpose()).amax() <= 2.0 / (500f64).sqrt());
        }
    }

    #[test]
    fn combined_kernel_cases() {
        let k1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let k2 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let mats = vec![k1.clone(), k2.clone()];
        let c = combined_kernel(&mats, &KernelWeights::new(vec![0.5, 0.5]).unwrap()).unwrap();
        assert_eq!(c, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        let c = combined_kernel(&mats, &KernelWeights::new(vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(c, k1);
        let same = vec![k2.clone(), k2.clone()];
        let c = combined_kernel(&same, &KernelWeights::new(vec![0.2, 0.8]).unwrap()).unwrap();
        assert!((c - k2).amax() < 1e-15);
        assert!(combined_kernel(&mats, &KernelWeights::uniform(3)).is_err());
    }

    #[test]
    fn weights_normalize() {
        let w = KernelWeights::new(vec![2.0, -1e-13, 2.0]).unwrap();
        assert_eq!(w.as_slice(), &[0.5, 0.0, 0.5]);
        assert!(KernelWeights::new(vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn cross_gram_consistency() {
        let spec = AnsatzSpec::qaoa_sel(2, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let th = ParameterSet::random(&spec, &mut rng);
        let train = random_instances(&mut rng, 3, 2, 1);
        let test = random_instances(&mut rng, 2, 2, 1);
        let tshk = TrainedTshk {
            spec: spec.clone(),
            theta: th.clone(),
            eta: KernelWeights::new(vec![0.25, 0.75]).unwrap(),
            times: vec![0.4, 0.8],
            time_map: TimeMap::default(),
            scaler: FeatureScaler::identity(1),
            seed: 0,
        };
        let (mats, combined) = cross_gram(&tshk, &train, &test, KernelMode::Exact).unwrap();
        for l in 0..2 {
            for i in 0..2 {
                for j in 0..3 {
                    let k = kappa_t(&spec, &th, test[i].at(l), train[j].at(l), tshk.times[l], KernelMode::Exact)
                        .unwrap();
                    assert!((mats[l][(i, j)] - k).abs() < 1e-12);
                }
            }
        }
        assert!((combined[(0, 0)] - (0.25 * mats[0][(0, 0)] + 0.75 * mats[1][(0, 0)])).abs() < 1e-15);

        let (self_mats, _) = cross_gram(&tshk, &train, &train, KernelMode::Exact).unwrap();
        let g = gram_stack(&spec, &th, &train, &tshk.times, KernelMode::Exact).unwrap();
        for (a, b) in self_mats.iter().zip(&g.mats) {
            assert!((a - b).amax() < 1e-12);
        }
        let (_, row) = cross_gram(&tshk, &train, &train[1..2], KernelMode::Exact).unwrap();
        assert!((row[(0, 1)] - 1.0).abs() < 1e-12);
    }
}
