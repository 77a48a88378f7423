//! Soft-margin kernel SVM trained by SMO, decision functions, metrics,
//! kernel alignment and spectral-shift regularization.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelWeights;
use crate::util::{check_symmetric, min_eigenvalue};

const SMO_TOL: f64 = 1e-6;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    /// Dual coefficients, one per training instance, in `[0, C]`.
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub labels: Vec<f64>,
    pub c: f64,
    /// Indices with `alpha > 0`.
    pub support: Vec<usize>,
    pub iterations: usize,
    /// Bias-free decision values on the training set at convergence.
    #[serde(skip)]
    train_f: Vec<f64>,
}

impl SvmModel {
    /// Decision values on the training rows, as computed during fitting.
    pub fn train_decisions(&self) -> Vec<f64> {
        self.train_f.iter().map(|f| f + self.bias).collect()
    }

    /// `sum_i alpha_i - 1/2 sum_ij alpha_i alpha_j y_i y_j K_ij`.
    pub fn dual_objective(&self, gram: &DMatrix<f64>) -> f64 {
        let n = self.alpha.len();
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += self.alpha[i] * self.alpha[j] * self.labels[i] * self.labels[j] * gram[(i, j)];
            }
        }
        self.alpha.iter().sum::<f64>() - 0.5 * quad
    }
}

fn check_labels(labels: &[f64]) -> Result<()> {
    if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::usage("labels must be +1/-1"));
    }
    let pos = labels.iter().filter(|&&y| y > 0.0).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::usage("SVM training needs both classes"));
    }
    Ok(())
}

/// Fit the dual soft-margin problem with SMO, choosing the maximally
/// violating pair at each step. Indefinite pair curvature is floored at a tiny
/// positive value so noisy Gram matrices still converge.
pub fn svm_fit(gram: &DMatrix<f64>, labels: &[f64], c: f64) -> Result<SvmModel> {
    check_symmetric(gram, 1e-9, "Gram matrix")?;
    if gram.nrows() != labels.len() {
        return Err(Error::usage(format!(
            "Gram matrix is {}x{} but there are {} labels",
            gram.nrows(),
            gram.ncols(),
            labels.len()
        )));
    }
    check_labels(labels)?;
    if !(c > 0.0) {
        return Err(Error::config(format!("SVM C = {c} must be positive")));
    }
    let n = labels.len();
    let y = labels;
    let q = |i: usize, j: usize| y[i] * y[j] * gram[(i, j)];
    let mut alpha = vec![0.0; n];
    // gradient of 1/2 a^T Q a - e^T a
    let mut g = vec![-1.0; n];
    let max_iter = 100_000usize.saturating_mul(n).max(1);
    let mut iterations = 0;
    while iterations < max_iter {
        let mut gmax = f64::NEG_INFINITY;
        let mut gmin = f64::INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..n {
            let v = -y[t] * g[t];
            let up = (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
            let low = (y[t] < 0.0 && alpha[t] < c) || (y[t] > 0.0 && alpha[t] > 0.0);
            if up && v > gmax {
                gmax = v;
                i = t;
            }
            if low && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < SMO_TOL {
            break;
        }
        iterations += 1;
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-g[i] - g[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (g[i] - g[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            g[t] += q(t, i) * di + q(t, j) * dj;
        }
    }
    if iterations >= max_iter {
        log::warn!("SMO hit its iteration cap ({max_iter}) before reaching tolerance");
    }

    let f: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| alpha[j] * y[j] * gram[(i, j)]).sum())
        .collect();
    let free: Vec<usize> = (0..n).filter(|&i| alpha[i] > 0.0 && alpha[i] < c).collect();
    let bias = if !free.is_empty() {
        free.iter().map(|&i| y[i] - f[i]).sum::<f64>() / free.len() as f64
    } else {
        let max_neg = (0..n).filter(|&i| y[i] < 0.0).map(|i| f[i]).fold(f64::NEG_INFINITY, f64::max);
        let min_pos = (0..n).filter(|&i| y[i] > 0.0).map(|i| f[i]).fold(f64::INFINITY, f64::min);
        -(max_neg + min_pos) / 2.0
    };
    Ok(SvmModel {
        support: (0..n).filter(|&i| alpha[i] > 0.0).collect(),
        alpha,
        bias,
        labels: labels.to_vec(),
        c,
        iterations,
        train_f: f,
    })
}

/// `D(x) = sum_i alpha_i y_i k_i + b` for one kernel row against the training set.
pub fn decide(model: &SvmModel, kernel_row: &[f64]) -> Result<f64> {
    if kernel_row.len() != model.alpha.len() {
        return Err(Error::usage(format!(
            "kernel row has length {}, model has {} training instances",
            kernel_row.len(),
            model.alpha.len()
        )));
    }
    Ok(model
        .alpha
        .iter()
        .zip(&model.labels)
        .zip(kernel_row)
        .map(|((a, y), k)| a * y * k)
        .sum::<f64>()
        + model.bias)
}

/// Decision values for every row of a test-by-train kernel.
pub fn decide_all(model: &SvmModel, cross: &DMatrix<f64>) -> Result<Vec<f64>> {
    (0..cross.nrows())
        .map(|i| decide(model, &cross.row(i).iter().copied().collect::<Vec<_>>()))
        .collect()
}

/// `+1` for nonnegative values, `-1` otherwise.
pub fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Weighted vote score `sum_l eta_l sign(D_l)`.
pub fn vote_score(decisions: &[f64], eta: &KernelWeights) -> Result<f64> {
    if decisions.len() != eta.len() {
        return Err(Error::usage("one decision value per time slice is required"));
    }
    Ok(decisions.iter().zip(eta.as_slice()).map(|(d, w)| w * sign(*d)).sum())
}

/// `sign(sum_l eta_l sign(D_l(x_l)))`, with an exact tie going to `+1`.
pub fn per_time_vote(models: &[SvmModel], rows: &[Vec<f64>], eta: &KernelWeights) -> Result<i8> {
    if models.len() != rows.len() {
        return Err(Error::usage("one kernel row per time-slice model is required"));
    }
    let decisions = models
        .iter()
        .zip(rows)
        .map(|(m, r)| decide(m, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(sign(vote_score(&decisions, eta)?) as i8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1: f64,
    pub balanced_accuracy: f64,
    pub roc_auc: f64,
    pub accuracy: f64,
    pub alignment_train: Option<f64>,
    pub alignment_test: Option<f64>,
}

/// Area under the ROC curve by concordant-pair counting (ties count one half).
pub fn roc_auc(y_true: &[f64], scores: &[f64]) -> Result<f64> {
    if y_true.len() != scores.len() {
        return Err(Error::usage("labels and scores differ in length"));
    }
    let pos: Vec<f64> = y_true.iter().zip(scores).filter(|(y, _)| **y > 0.0).map(|(_, s)| *s).collect();
    let neg: Vec<f64> = y_true.iter().zip(scores).filter(|(y, _)| **y < 0.0).map(|(_, s)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::usage("ROC AUC is undefined for a single-class label vector"));
    }
    let mut acc = 0.0;
    for p in &pos {
        for n in &neg {
            acc += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(acc / (pos.len() * neg.len()) as f64)
}

/// F1 (positive class `+1`), balanced accuracy, accuracy and ROC AUC.
pub fn metrics(y_true: &[f64], y_pred: &[f64], scores: &[f64]) -> Result<MetricsReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::usage("labels and predictions differ in length"));
    }
    let roc_auc = roc_auc(y_true, scores)?;
    let (mut tp, mut tn, mut fp, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    for (t, p) in y_true.iter().zip(y_pred) {
        match (*t > 0.0, *p > 0.0) {
            (true, true) => tp += 1.0,
            (false, false) => tn += 1.0,
            (false, true) => fp += 1.0,
            (true, false) => fn_ += 1.0,
        }
    }
    let f1 = if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fn_) } else { 0.0 };
    let tpr = tp / (tp + fn_);
    let tnr = tn / (tn + fp);
    Ok(MetricsReport {
        f1,
        balanced_accuracy: 0.5 * (tpr + tnr),
        roc_auc,
        accuracy: (tp + tn) / y_true.len() as f64,
        alignment_train: None,
        alignment_test: None,
    })
}

/// `1 - mean |K_ij - y_i y'_j|` for row labels `y` and column labels `y'`.
pub fn kernel_alignment_rect(k: &DMatrix<f64>, row_labels: &[f64], col_labels: &[f64]) -> Result<f64> {
    if k.nrows() != row_labels.len() || k.ncols() != col_labels.len() {
        return Err(Error::usage(format!(
            "kernel is {}x{} but label vectors have lengths {} and {}",
            k.nrows(),
            k.ncols(),
            row_labels.len(),
            col_labels.len()
        )));
    }
    if k.is_empty() {
        return Err(Error::usage("alignment of an empty kernel"));
    }
    let mut dev = 0.0;
    for i in 0..k.nrows() {
        for j in 0..k.ncols() {
            dev += (k[(i, j)] - row_labels[i] * col_labels[j]).abs();
        }
    }
    Ok(1.0 - dev / k.len() as f64)
}

pub fn kernel_alignment(k: &DMatrix<f64>, labels: &[f64]) -> Result<f64> {
    kernel_alignment_rect(k, labels, labels)
}

/// `K - eps_min I` when the smallest eigenvalue `eps_min` is negative.
pub fn tikhonov_regularize(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(k, 1e-9, "matrix")?;
    let sym = (k + k.transpose()) * 0.5;
    let eps = min_eigenvalue(&sym);
    if eps < 0.0 {
        let mut out = sym;
        for i in 0..out.nrows() {
            out[(i, i)] -= eps;
        }
        Ok(out)
    } else {
        Ok(k.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    /// One SVM on the weighted-sum kernel.
    #[default]
    Combined,
    /// One SVM per time slice, combined by weighted majority vote.
    Vote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// Combined mode: `D(x)`. Vote mode: the weighted vote score.
    pub scores: Vec<f64>,
    pub predictions: Vec<f64>,
}

impl Evaluation {
    /// `index,label,score,prediction` rows.
    pub fn decisions_csv(&self, y_true: &[f64]) -> String {
        let mut s = String::from("index,label,decision,prediction\n");
        for (i, ((y, d), p)) in y_true.iter().zip(&self.scores).zip(&self.predictions).enumerate() {
            s.push_str(&format!("{i},{y},{d:?},{p}\n"));
        }
        s
    }
}

/// Fit on the combined training kernel and score the combined test kernel.
pub fn evaluate_combined(
    k_train: &DMatrix<f64>,
    y_train: &[f64],
    k_test: &DMatrix<f64>,
    y_test: &[f64],
    c: f64,
) -> Result<Evaluation> {
    let model = svm_fit(k_train, y_train, c)?;
    let scores = decide_all(&model, k_test)?;
    let predictions: Vec<f64> = scores.iter().map(|&d| sign(d)).collect();
    let mut report = metrics(y_test, &predictions, &scores)?;
    report.alignment_train = Some(kernel_alignment(k_train, y_train)?);
    report.alignment_test = Some(kernel_alignment_rect(k_test, y_test, y_train)?);
    Ok(Evaluation {
        report,
        scores,
        predictions,
    })
}

/// Fit one SVM per time slice and classify by weighted vote.
pub fn evaluate_vote(
    train_mats: &[DMatrix<f64>],
    y_train: &[f64],
    test_mats: &[DMatrix<f64>],
    y_test: &[f64],
    eta: &KernelWeights,
    c: f64,
) -> Result<Evaluation> {
    if train_mats.len() != eta.len() || test_mats.len() != eta.len() {
        return Err(Error::usage("need one train and one test kernel per weight"));
    }
    let models = train_mats
        .par_iter()
        .map(|k| svm_fit(k, y_train, c))
        .collect::<Result<Vec<_>>>()?;
    let per_slice = models
        .iter()
        .zip(test_mats)
        .map(|(m, k)| decide_all(m, k))
        .collect::<Result<Vec<_>>>()?;
    let m = y_test.len();
    let scores = (0..m)
        .map(|i| vote_score(&per_slice.iter().map(|d| d[i]).collect::<Vec<_>>(), eta))
        .collect::<Result<Vec<f64>>>()?;
    let predictions: Vec<f64> = scores.iter().map(|&s| sign(s)).collect();
    let report = metrics(y_test, &predictions, &scores)?;
    Ok(Evaluation {
        report,
        scores,
        predictions,
    })
}
