//! Kernel training: maximize over circuit angles the minimum of the KOMD
//! margin objective over dual weights, then read off per-time kernel weights.

mod adam;
mod komd;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ansatz::{AnsatzSpec, ParameterSet};
use crate::data::{Dataset, FeatureScaler, TimeSeriesInstance};
use crate::error::{Error, Result};
use crate::kernel::{gram_stack, upper_pairs, KernelCircuits, KernelMode, KernelWeights, TimeMap, TrainedTshk};
use crate::util::mix_seed;

pub use adam::{adam_step, AdamState};
pub use komd::{komd_loss, project_simplex, solve_inner, DualSolution, KomdProblem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub restarts: usize,
    pub seed: u64,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 250,
            batch_size: 4,
            lambda: 0.1,
            learning_rate: 0.05,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            restarts: 1,
            seed: 0,
            inner_tol: 1e-8,
            inner_max_iter: 10_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, train_size: usize) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("train.batch_size must be at least 2"));
        }
        if self.batch_size > train_size {
            return Err(Error::config(format!(
                "train.batch_size = {} exceeds the training set size {train_size}",
                self.batch_size
            )));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::config(format!(
                "train.lambda = {} must lie in (0, 1]; lambda = 0 leaves the dual minimizer non-unique",
                self.lambda
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.inner_tol > 0.0) {
            return Err(Error::config("learning_rate and inner_tol must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if self.restarts == 0 {
            return Err(Error::config("train.restarts must be at least 1"));
        }
        Ok(())
    }
}

/// Uniform sample without replacement, redrawn until both classes appear.
pub fn sample_batch(ds: &Dataset, n_batch: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if !ds.has_both_classes() {
        return Err(Error::Training(
            "cannot draw a two-class batch from a single-class dataset".into(),
        ));
    }
    if n_batch < 2 || n_batch > ds.len() {
        return Err(Error::usage(format!(
            "batch size {n_batch} not in [2, {}]",
            ds.len()
        )));
    }
    loop {
        let mut idx = sample(rng, ds.len(), n_batch).into_vec();
        idx.sort_unstable();
        let pos = idx.iter().filter(|&&i| ds.instances[i].label == 1).count();
        if pos > 0 && pos < n_batch {
            return Ok(idx);
        }
    }
}

fn quad_form(k: &DMatrix<f64>, y: &[f64], phi: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..phi.len() {
        for j in 0..phi.len() {
            acc += phi[i] * phi[j] * y[i] * y[j] * k[(i, j)];
        }
    }
    acc
}

/// `eta_l` proportional to `phi^T Y K_l Y phi`.
pub fn extract_weights(mats: &[DMatrix<f64>], labels: &[f64], phi: &[f64]) -> Result<KernelWeights> {
    if mats.is_empty() {
        return Err(Error::usage("no Gram matrices"));
    }
    for m in mats {
        if m.nrows() != phi.len() || m.ncols() != phi.len() || labels.len() != phi.len() {
            return Err(Error::usage("Gram, label and phi dimensions disagree"));
        }
    }
    let q: Vec<f64> = mats.iter().map(|k| quad_form(k, labels, phi)).collect();
    let total: f64 = q.iter().sum();
    if !(total.abs() > 0.0) {
        return Err(Error::DegenerateKernel(
            "every per-time quadratic form vanishes".into(),
        ));
    }
    KernelWeights::new(q.into_iter().map(|v| v / total).collect())
}

/// Per-slice Gram matrices of `instances` together with the gradient of
/// `sum_l phi^T Y K_l Y phi` contribution from each upper-triangle cell.
struct BatchEval {
    mats: Vec<DMatrix<f64>>,
    /// `(l, i, j)` and `d K^{ij}_l / d theta`.
    grads: Vec<((usize, usize, usize), Vec<f64>)>,
}

fn eval_with_gradients(
    spec: &AnsatzSpec,
    theta: &ParameterSet,
    instances: &[TimeSeriesInstance],
    times: &[f64],
) -> Result<BatchEval> {
    let kc = KernelCircuits::new(spec, theta, times)?;
    let n = instances.len();
    let cells: Vec<(usize, usize, usize)> = (0..times.len())
        .flat_map(|l| upper_pairs(n).into_iter().map(move |(i, j)| (l, i, j)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(l, i, j)| kc.value_and_gradient(l, instances[i].at(l), instances[j].at(l)))
        .collect::<Result<Vec<_>>>()?;
    let mut mats: Vec<DMatrix<f64>> = (0..times.len()).map(|_| DMatrix::identity(n, n)).collect();
    let mut grads = Vec::with_capacity(cells.len());
    for (&(l, i, j), (v, g)) in cells.iter().zip(results) {
        mats[l][(i, j)] = v;
        mats[l][(j, i)] = v;
        grads.push(((l, i, j), g));
    }
    Ok(BatchEval { mats, grads })
}

fn envelope_gradient(eval: &BatchEval, y: &[f64], phi: &[f64], lambda: f64, n_params: usize) -> Vec<f64> {
    let mut grad = vec![0.0; n_params];
    for &((_, i, j), ref g) in &eval.grads {
        let w = 2.0 * (1.0 - lambda) * phi[i] * phi[j] * y[i] * y[j];
        if w != 0.0 {
            for (acc, gk) in grad.iter_mut().zip(g) {
                *acc += w * gk;
            }
        }
    }
    grad
}

fn sum_mats(mats: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = mats.first().map(|m| m.nrows()).unwrap_or(0);
    mats.iter().fold(DMatrix::zeros(n, n), |acc, m| acc + m)
}

/// Gradient of `min_phi L(theta, phi)` over the flat `[alpha | beta | gamma]`
/// vector, evaluated at the fixed inner optimum `phi_star`. `times` are
/// evolution times.
pub fn outer_gradient(
    spec: &AnsatzSpec,
    theta: &ParameterSet,
    batch: &[TimeSeriesInstance],
    times: &[f64],
    phi_star: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    if phi_star.len() != batch.len() {
        return Err(Error::usage("phi length differs from batch size"));
    }
    let y: Vec<f64> = batch.iter().map(TimeSeriesInstance::y).collect();
    let eval = eval_with_gradients(spec, theta, batch, times)?;
    Ok(envelope_gradient(&eval, &y, phi_star, lambda, spec.n_params()))
}

/// Inner optimum of the margin objective on `instances` at `theta`.
pub fn margin_solution(
    spec: &AnsatzSpec,
    theta: &ParameterSet,
    instances: &[TimeSeriesInstance],
    times: &[f64],
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<DMatrix<f64>>, DualSolution)> {
    let stack = gram_stack(spec, theta, instances, times, KernelMode::Exact)?;
    let y: Vec<f64> = instances.iter().map(TimeSeriesInstance::y).collect();
    let problem = KomdProblem::new(stack.equal_sum(), y, lambda)?;
    let sol = solve_inner(&problem, tol, max_iter)?;
    Ok((stack.mats, sol))
}

/// Kernel weights of a precomputed Gram stack: solve the margin problem on the
/// equal-weight sum, then weight each slice by its share of the margin.
pub fn weights_from_stack(
    mats: &[DMatrix<f64>],
    labels: &[f64],
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(KernelWeights, DualSolution)> {
    let n = labels.len();
    let sum = mats.iter().fold(DMatrix::zeros(n, n), |acc, m| acc + m);
    let problem = KomdProblem::new(sum, labels.to_vec(), lambda)?;
    let sol = solve_inner(&problem, tol, max_iter)?;
    Ok((extract_weights(mats, labels, &sol.phi)?, sol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub restart: usize,
    pub iteration: usize,
    /// Batch margin loss at the angles before this iteration's update.
    pub loss: f64,
    /// `loss / N_batch^2`.
    pub normalized_loss: f64,
    pub grad_norm: f64,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub restart: usize,
    pub seed: u64,
    /// Margin loss on the evaluation split at the final angles; `None` if the
    /// restart was abandoned.
    pub eval_loss: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedTshk,
    pub best_restart: usize,
    pub restarts: Vec<RestartRecord>,
    pub trace: Vec<TraceRow>,
    /// Inner solution of the final full-training-set pass.
    pub final_solution: DualSolution,
}

impl TrainOutcome {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("restart,iteration,loss,normalized_loss,grad_norm,kkt_residual\n");
        for r in &self.trace {
            s.push_str(&format!(
                "{},{},{:?},{:?},{:?},{:?}\n",
                r.restart, r.iteration, r.loss, r.normalized_loss, r.grad_norm, r.kkt_residual
            ));
        }
        s
    }

    pub fn restarts_csv(&self) -> String {
        let mut s = String::from("restart,seed,eval_loss,selected,failure\n");
        for r in &self.restarts {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.restart,
                r.seed,
                r.eval_loss.map(|v| format!("{v:?}")).unwrap_or_default(),
                u8::from(r.restart == self.best_restart),
                r.failure.as_deref().unwrap_or("").replace(',', ";")
            ));
        }
        s
    }
}

struct RestartRun {
    theta: ParameterSet,
    trace: Vec<TraceRow>,
}

fn run_restart(
    train: &Dataset,
    spec: &AnsatzSpec,
    times: &[f64],
    cfg: &TrainConfig,
    restart: usize,
    seed: u64,
) -> Result<RestartRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = ParameterSet::random(spec, &mut rng);
    let mut flat = theta.to_flat();
    let mut state = AdamState::new(flat.len());
    let mut trace = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let idx = sample_batch(train, cfg.batch_size, &mut rng)?;
        let batch: Vec<TimeSeriesInstance> = idx.iter().map(|&i| train.instances[i].clone()).collect();
        let y: Vec<f64> = batch.iter().map(TimeSeriesInstance::y).collect();
        let eval = eval_with_gradients(spec, &theta, &batch, times)?;
        let problem = KomdProblem::new(sum_mats(&eval.mats), y.clone(), cfg.lambda)?;
        let sol = solve_inner(&problem, cfg.inner_tol, cfg.inner_max_iter)?;
        let grad = envelope_gradient(&eval, &y, &sol.phi, cfg.lambda, flat.len());
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !sol.loss_value.is_finite() || !grad_norm.is_finite() {
            return Err(Error::Training(format!("non-finite loss or gradient at iteration {it}")));
        }
        trace.push(TraceRow {
            restart,
            iteration: it,
            loss: sol.loss_value,
            normalized_loss: sol.loss_value / (cfg.batch_size * cfg.batch_size) as f64,
            grad_norm,
            kkt_residual: sol.kkt_residual,
        });
        let (next, st) = adam_step(
            &flat,
            &grad,
            &state,
            cfg.learning_rate,
            (cfg.adam_beta1, cfg.adam_beta2),
            cfg.adam_eps,
        );
        flat = next;
        state = st;
        theta = ParameterSet::from_flat(spec, &flat)?;
    }
    Ok(RestartRun { theta, trace })
}

/// Train the kernel. `train` and `eval` must already be scaled; `eval` picks
/// the restart with the largest margin loss. The winner's angles go through a
/// final inner solve on the whole training set, whose dual weights give `eta`.
pub fn train(
    train: &Dataset,
    eval: &Dataset,
    spec: &AnsatzSpec,
    time_map: TimeMap,
    scaler: FeatureScaler,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    spec.validate()?;
    cfg.validate(train.len())?;
    if train.d != spec.n_features {
        return Err(Error::usage(format!(
            "dataset has d={} but the ansatz expects {} features",
            train.d, spec.n_features
        )));
    }
    train.check_compatible(eval)?;
    if !train.has_both_classes() || !eval.has_both_classes() {
        return Err(Error::Training("training and evaluation sets need both classes".into()));
    }
    let times = time_map.evolution_times(&train.times);
    let runs: Vec<(RestartRecord, Option<RestartRun>)> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let seed = mix_seed(cfg.seed, &[r as u64]);
            let outcome = run_restart(train, spec, &times, cfg, r, seed).and_then(|run| {
                let (_, sol) = margin_solution(
                    spec,
                    &run.theta,
                    &eval.instances,
                    &times,
                    cfg.lambda,
                    cfg.inner_tol,
                    cfg.inner_max_iter.max(100_000),
                )?;
                if !sol.loss_value.is_finite() {
                    return Err(Error::Training("non-finite evaluation loss".into()));
                }
                Ok((run, sol.loss_value))
            });
            match outcome {
                Ok((run, loss)) => (
                    RestartRecord {
                        restart: r,
                        seed,
                        eval_loss: Some(loss),
                        failure: None,
                    },
                    Some(run),
                ),
                Err(e) => {
                    log::warn!("restart {r} abandoned: {e}");
                    (
                        RestartRecord {
                            restart: r,
                            seed,
                            eval_loss: None,
                            failure: Some(e.to_string()),
                        },
                        None,
                    )
                }
            }
        })
        .collect();

    let best = runs
        .iter()
        .filter_map(|(rec, run)| Some((rec.restart, rec.eval_loss?, run.as_ref()?)))
        .fold(None::<(usize, f64, &RestartRun)>, |acc, cand| match acc {
            Some(a) if a.1 >= cand.1 => Some(a),
            _ => Some(cand),
        })
        .ok_or_else(|| Error::Training("every restart failed".into()))?;
    let (best_restart, _, best_run) = best;
    let theta = best_run.theta.clone();
    let (mats, final_solution) = margin_solution(
        spec,
        &theta,
        &train.instances,
        &times,
        cfg.lambda,
        cfg.inner_tol,
        cfg.inner_max_iter.max(100_000),
    )?;
    let eta = extract_weights(&mats, &train.labels(), &final_solution.phi)?;
    let mut trace = Vec::new();
    let mut restarts = Vec::new();
    for (rec, run) in runs {
        if let Some(run) = run {
            trace.extend(run.trace);
        }
        restarts.push(rec);
    }
    Ok(TrainOutcome {
        model: TrainedTshk {
            spec: spec.clone(),
            theta,
            eta,
            times: train.times.clone(),
            time_map,
            scaler,
            seed: cfg.seed,
        },
        best_restart,
        restarts,
        trace,
        final_solution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_sincos;
    use rand::Rng;

    #[test]
    fn batch_sampling() {
        let ds = gen_sincos(3, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_batch(&ds, 2, &mut rng).unwrap(), vec![0, 1]);
        let one = ds.subset(&[0]);
        assert!(matches!(sample_batch(&one, 2, &mut rng), Err(Error::Training(_))));
    }

    #[test]
    fn batch_inclusion_is_uniform() {
        let inst = |k: usize| TimeSeriesInstance::new(vec![vec![k as f64]], if k < 25 { 1 } else { -1 }).unwrap();
        let ds = Dataset::new("b", (0..50).map(inst).collect(), vec![0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 10_000;
        let mut hits = vec![0usize; 50];
        for _ in 0..draws {
            let b = sample_batch(&ds, 4, &mut rng).unwrap();
            let pos = b.iter().filter(|&&i| i < 25).count();
            assert!(pos > 0 && pos < 4);
            for i in b {
                hits[i] += 1;
            }
        }
        // rejection is symmetric in the classes, so inclusion stays 4/50 per instance
        let p = 4.0 / 50.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for h in hits {
            assert!((h as f64 - draws as f64 * p).abs() <= 3.5 * sigma, "{h}");
        }
    }

    #[test]
    fn weight_examples() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]);
        let y = [1.0, -1.0];
        let phi = [1.0, 1.0];
        assert_eq!(extract_weights(&[k.clone()], &y, &phi).unwrap().as_slice(), &[1.0]);
        let w = extract_weights(&[k.clone(), k.clone(), k.clone()], &y, &phi).unwrap();
        for v in w.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        // quadratic forms 2 - 2 k12: 0.3 and 0.1
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.85, 0.85, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.95, 0.95, 1.0]);
        let w = extract_weights(&[a, b], &y, &phi).unwrap();
        assert!((w.as_slice()[0] - 0.75).abs() < 1e-12);
        assert!((w.as_slice()[1] - 0.25).abs() < 1e-12);
        let ones = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(
            extract_weights(&[ones], &y, &phi),
            Err(Error::DegenerateKernel(_))
        ));
    }

    #[test]
    fn gradient_endpoints() {
        let spec = AnsatzSpec::qaoa_sel(2, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = ParameterSet::random(&spec, &mut rng);
        let batch: Vec<TimeSeriesInstance> = (0..4)
            .map(|k| TimeSeriesInstance::new(vec![vec![rng.random_range(0.0..3.0)]], if k < 2 { 1 } else { -1 }).unwrap())
            .collect();
        let phi = [0.5, 0.5, 0.5, 0.5];
        let g = outer_gradient(&spec, &theta, &batch, &[0.7], &phi, 1.0).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let g = outer_gradient(&spec, &theta, &batch, &[0.0], &phi, 0.1).unwrap();
        for v in &g[spec.gamma_offset()..] {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn zero_iterations_keeps_initial_angles() {
        let ds = gen_sincos(3, 0).unwrap();
        let spec = AnsatzSpec::qaoa_sel(2, 1, 1).unwrap();
        let cfg = TrainConfig {
            iterations: 0,
            batch_size: 2,
            seed: 5,
            ..Default::default()
        };
        let out = train(&ds, &ds, &spec, TimeMap::default(), FeatureScaler::identity(1), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(5, &[0]));
        assert_eq!(out.model.theta, ParameterSet::random(&spec, &mut rng));
        assert!(out.trace.is_empty());
        assert!((out.model.eta.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_rejected() {
        let ds = gen_sincos(3, 0).unwrap();
        let spec = AnsatzSpec::qaoa_sel(2, 1, 1).unwrap();
        let cfg = TrainConfig {
            lambda: 0.0,
            batch_size: 2,
            ..Default::default()
        };
        assert!(matches!(
            train(&ds, &ds, &spec, TimeMap::default(), FeatureScaler::identity(1), &cfg),
            Err(Error::Config(_))
        ));
    }
}
