//! Parameterized circuit families for the time-series Hamiltonian kernel.
//!
//! A kernel element is the all-zeros probability of
//!
//! ```text
//! |0> -> V_t -> U(x) -> U(x')^dagger -> V_t^dagger
//! ```
//!
//! where `V_t = W^dagger(beta) D(gamma, t) W(beta)` is a learnable time-evolution
//! operator written through its eigendecomposition and `U(x, alpha)` embeds one
//! time slice of a series. Every gate produced here records which entry of the
//! flat parameter vector `[alpha | beta | gamma]` drives its angle, so gradients
//! can be assembled with the parameter-shift rule.

mod shift;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Gate, StateVector, MAX_QUBITS};

pub use shift::{
    prob_zero_and_gradient, shift_rule_derivative, shift_rule_tangents, ShiftTerm,
};

/// Data-embedding family `U(x, alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Embedding {
    /// `RY(x_j)` on qubit `j < d`, identity elsewhere. No trainable angles.
    RyFixed,
    /// QAOA-style layers: data-scaled RZ phases, ring ZZ data products, RX mixer.
    Qaoa { layers: usize },
}

/// Structure of the kernel circuits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnsatzSpec {
    pub n_qubits: usize,
    pub n_features: usize,
    pub embedding: Embedding,
    /// Strongly-entangling layers in `W(beta)`.
    pub sel_layers: usize,
    /// Largest Z-string weight kept in the diagonal `D(gamma, t)`.
    pub walsh_locality: usize,
}

impl AnsatzSpec {
    /// Spec with the default Walsh truncation `min(n, 2)`.
    pub fn new(
        n_qubits: usize,
        n_features: usize,
        embedding: Embedding,
        sel_layers: usize,
    ) -> Result<Self> {
        let spec = AnsatzSpec {
            n_qubits,
            n_features,
            embedding,
            sel_layers,
            walsh_locality: n_qubits.min(2),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_locality(mut self, k: usize) -> Result<Self> {
        self.walsh_locality = k;
        self.validate()?;
        Ok(self)
    }

    /// `QAOA-g-SEL-g` with default locality.
    pub fn qaoa_sel(n_qubits: usize, n_features: usize, layers: usize) -> Result<Self> {
        Self::new(n_qubits, n_features, Embedding::Qaoa { layers }, layers)
    }

    /// `Ry-SEL-g` with default locality.
    pub fn ry_sel(n_qubits: usize, n_features: usize, layers: usize) -> Result<Self> {
        Self::new(n_qubits, n_features, Embedding::RyFixed, layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_qubits == 0 || self.n_qubits > MAX_QUBITS {
            return Err(Error::config(format!(
                "n_qubits = {} outside 1..={MAX_QUBITS}",
                self.n_qubits
            )));
        }
        if self.n_features == 0 {
            return Err(Error::config("n_features must be positive"));
        }
        if self.embedding == Embedding::RyFixed && self.n_features > self.n_qubits {
            return Err(Error::config(format!(
                "ry_fixed embedding needs n_features ({}) <= n_qubits ({})",
                self.n_features, self.n_qubits
            )));
        }
        if self.walsh_locality == 0 || self.walsh_locality > self.n_qubits {
            return Err(Error::config(format!(
                "walsh_locality = {} outside 1..={}",
                self.walsh_locality, self.n_qubits
            )));
        }
        Ok(())
    }

    pub fn alpha_len(&self) -> usize {
        match self.embedding {
            Embedding::RyFixed => 0,
            Embedding::Qaoa { layers } => 3 * self.n_qubits * layers,
        }
    }

    pub fn beta_len(&self) -> usize {
        3 * self.n_qubits * self.sel_layers
    }

    pub fn gamma_len(&self) -> usize {
        (1..=self.walsh_locality)
            .map(|m| binomial(self.n_qubits, m))
            .sum()
    }

    pub fn n_params(&self) -> usize {
        self.alpha_len() + self.beta_len() + self.gamma_len()
    }

    pub fn beta_offset(&self) -> usize {
        self.alpha_len()
    }

    pub fn gamma_offset(&self) -> usize {
        self.alpha_len() + self.beta_len()
    }

    /// Nonempty qubit subsets of size `<= walsh_locality`, ordered by size then
    /// lexicographically. One `gamma` entry per subset.
    pub fn zstring_basis(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(self.gamma_len());
        for size in 1..=self.walsh_locality {
            let mut combo: Vec<usize> = (0..size).collect();
            loop {
                out.push(combo.clone());
                // advance to the next lexicographic combination
                let n = self.n_qubits;
                let mut i = size;
                while i > 0 && combo[i - 1] == n - size + i - 1 {
                    i -= 1;
                }
                if i == 0 {
                    break;
                }
                combo[i - 1] += 1;
                for k in i..size {
                    combo[k] = combo[k - 1] + 1;
                }
            }
        }
        out
    }

    /// Short name such as `QAOA-3-SEL-3` or `Ry-SEL-1`.
    pub fn label(&self) -> String {
        match self.embedding {
            Embedding::RyFixed => format!("Ry-SEL-{}", self.sel_layers),
            Embedding::Qaoa { layers } => format!("QAOA-{layers}-SEL-{}", self.sel_layers),
        }
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Trainable angles `theta = {alpha, beta, gamma}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl ParameterSet {
    pub fn zeros(spec: &AnsatzSpec) -> Self {
        ParameterSet {
            alpha: vec![0.0; spec.alpha_len()],
            beta: vec![0.0; spec.beta_len()],
            gamma: vec![0.0; spec.gamma_len()],
        }
    }

    /// Every entry drawn uniformly from `[-pi, pi]`.
    pub fn random(spec: &AnsatzSpec, rng: &mut impl Rng) -> Self {
        let flat: Vec<f64> = (0..spec.n_params())
            .map(|_| rng.random_range(-std::f64::consts::PI..=std::f64::consts::PI))
            .collect();
        Self::from_flat(spec, &flat).expect("length matches by construction")
    }

    pub fn from_flat(spec: &AnsatzSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.n_params() {
            return Err(Error::usage(format!(
                "expected {} parameters, got {}",
                spec.n_params(),
                flat.len()
            )));
        }
        let (a, rest) = flat.split_at(spec.alpha_len());
        let (b, g) = rest.split_at(spec.beta_len());
        Ok(ParameterSet {
            alpha: a.to_vec(),
            beta: b.to_vec(),
            gamma: g.to_vec(),
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.alpha);
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.gamma);
        v
    }

    pub fn len(&self) -> usize {
        self.alpha.len() + self.beta.len() + self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check(&self, spec: &AnsatzSpec) -> Result<()> {
        let ok = self.alpha.len() == spec.alpha_len()
            && self.beta.len() == spec.beta_len()
            && self.gamma.len() == spec.gamma_len();
        if ok {
            Ok(())
        } else {
            Err(Error::usage(format!(
                "parameter lengths ({}, {}, {}) do not match {} which needs ({}, {}, {})",
                self.alpha.len(),
                self.beta.len(),
                self.gamma.len(),
                spec.label(),
                spec.alpha_len(),
                spec.beta_len(),
                spec.gamma_len()
            )))
        }
    }
}

/// Gate angle `= coeff * theta[index]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRef {
    pub index: usize,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Op {
    pub gate: Gate,
    pub param: Option<ParamRef>,
}

/// Gate program over a fixed register, with parameter provenance per gate.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    n_qubits: usize,
    n_params: usize,
    ops: Vec<Op>,
}

impl Circuit {
    pub fn new(n_qubits: usize, n_params: usize) -> Self {
        Circuit {
            n_qubits,
            n_params,
            ops: Vec::new(),
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn push(&mut self, gate: Gate, param: Option<ParamRef>) -> Result<()> {
        gate.validate(self.n_qubits)?;
        if let Some(p) = param {
            if p.index >= self.n_params {
                return Err(Error::usage(format!(
                    "parameter index {} out of range ({} parameters)",
                    p.index, self.n_params
                )));
            }
        }
        self.ops.push(Op { gate, param });
        Ok(())
    }

    fn push_fixed(&mut self, gate: Gate) -> Result<()> {
        self.push(gate, None)
    }

    fn push_param(&mut self, gate: Gate, index: usize, coeff: f64) -> Result<()> {
        self.push(gate, Some(ParamRef { index, coeff }))
    }

    pub fn append(&mut self, other: &Circuit) -> Result<()> {
        if other.n_qubits != self.n_qubits || other.n_params != self.n_params {
            return Err(Error::usage("cannot append circuits with different shapes"));
        }
        self.ops.extend_from_slice(&other.ops);
        Ok(())
    }

    /// Reversed gate list with negated angles. CX is self-inverse.
    pub fn adjoint(&self) -> Circuit {
        let ops = self
            .ops
            .iter()
            .rev()
            .map(|op| Op {
                gate: op.gate.inverse(),
                param: op.param.map(|p| ParamRef {
                    index: p.index,
                    coeff: -p.coeff,
                }),
            })
            .collect();
        Circuit {
            n_qubits: self.n_qubits,
            n_params: self.n_params,
            ops,
        }
    }

    pub fn apply_to(&self, state: &mut StateVector) -> Result<()> {
        if state.n_qubits() != self.n_qubits {
            return Err(Error::usage(format!(
                "circuit on {} qubits applied to a {}-qubit state",
                self.n_qubits,
                state.n_qubits()
            )));
        }
        for op in &self.ops {
            state.apply_unchecked(&op.gate);
        }
        Ok(())
    }

    /// Final state when run on `|0...0>`.
    pub fn run(&self) -> StateVector {
        let mut s = StateVector::zero(self.n_qubits).expect("qubit count validated by spec");
        self.apply_to(&mut s).expect("register matches");
        s
    }

    pub fn prob_all_zeros(&self) -> f64 {
        self.run().prob_all_zeros()
    }
}

fn check_features(spec: &AnsatzSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.n_features {
        return Err(Error::usage(format!(
            "feature vector has length {}, expected {}",
            x.len(),
            spec.n_features
        )));
    }
    Ok(())
}

/// Data embedding `U(x, alpha)`.
pub fn build_embedding(spec: &AnsatzSpec, x: &[f64], alpha: &[f64]) -> Result<Circuit> {
    check_features(spec, x)?;
    if alpha.len() != spec.alpha_len() {
        return Err(Error::usage(format!(
            "alpha has length {}, expected {}",
            alpha.len(),
            spec.alpha_len()
        )));
    }
    let n = spec.n_qubits;
    let mut c = Circuit::new(n, spec.n_params());
    match spec.embedding {
        Embedding::RyFixed => {
            for (j, &xj) in x.iter().enumerate() {
                c.push_fixed(Gate::Ry { qubit: j, angle: xj })?;
            }
        }
        Embedding::Qaoa { layers } => {
            let xt = |j: usize| x[j % spec.n_features];
            for k in 0..layers {
                let base = 3 * n * k;
                for j in 0..n {
                    let idx = base + j;
                    c.push_param(
                        Gate::Rz {
                            qubit: j,
                            angle: alpha[idx] * xt(j),
                        },
                        idx,
                        xt(j),
                    )?;
                }
                if n >= 2 {
                    for j in 0..n {
                        let idx = base + n + j;
                        let next = (j + 1) % n;
                        let coeff = xt(j) * xt(next);
                        c.push_param(
                            Gate::ZPhase {
                                support: vec![j, next],
                                angle: alpha[idx] * coeff,
                            },
                            idx,
                            coeff,
                        )?;
                    }
                }
                for j in 0..n {
                    let idx = base + 2 * n + j;
                    c.push_param(
                        Gate::Rx {
                            qubit: j,
                            angle: alpha[idx],
                        },
                        idx,
                        1.0,
                    )?;
                }
            }
        }
    }
    Ok(c)
}

/// Strongly-entangling-layers eigenvector circuit `W(beta)`.
///
/// Layer `k` applies `RZ, RY, RZ` on every qubit followed by a CX ring with
/// range `r_k = (k mod (n - 1)) + 1`.
pub fn build_eigenvector_circuit(spec: &AnsatzSpec, beta: &[f64]) -> Result<Circuit> {
    if beta.len() != spec.beta_len() {
        return Err(Error::usage(format!(
            "beta has length {}, expected {}",
            beta.len(),
            spec.beta_len()
        )));
    }
    let n = spec.n_qubits;
    let off = spec.beta_offset();
    let mut c = Circuit::new(n, spec.n_params());
    for k in 0..spec.sel_layers {
        for j in 0..n {
            let b = 3 * (n * k + j);
            c.push_param(Gate::Rz { qubit: j, angle: beta[b] }, off + b, 1.0)?;
            c.push_param(
                Gate::Ry {
                    qubit: j,
                    angle: beta[b + 1],
                },
                off + b + 1,
                1.0,
            )?;
            c.push_param(
                Gate::Rz {
                    qubit: j,
                    angle: beta[b + 2],
                },
                off + b + 2,
                1.0,
            )?;
        }
        if n >= 2 {
            let r = (k % (n - 1)) + 1;
            for j in 0..n {
                c.push_fixed(Gate::Cx {
                    control: j,
                    target: (j + r) % n,
                })?;
            }
        }
    }
    Ok(c)
}

/// Diagonal evolution `D(gamma, t) = exp(-i t sum_S gamma_S Z_S)`.
pub fn build_diagonal(spec: &AnsatzSpec, gamma: &[f64], t: f64) -> Result<Circuit> {
    if gamma.len() != spec.gamma_len() {
        return Err(Error::usage(format!(
            "gamma has length {}, expected {}",
            gamma.len(),
            spec.gamma_len()
        )));
    }
    let off = spec.gamma_offset();
    let mut c = Circuit::new(spec.n_qubits, spec.n_params());
    for (s, support) in spec.zstring_basis().into_iter().enumerate() {
        c.push_param(
            Gate::ZPhase {
                support,
                angle: t * gamma[s],
            },
            off + s,
            t,
        )?;
    }
    Ok(c)
}

/// `V_t = W^dagger D(gamma, t) W` as a gate list: `W`, then `D`, then `W^dagger`.
pub fn build_time_evolution(
    spec: &AnsatzSpec,
    beta: &[f64],
    gamma: &[f64],
    t: f64,
) -> Result<Circuit> {
    let w = build_eigenvector_circuit(spec, beta)?;
    time_evolution_from(&w, spec, gamma, t)
}

fn time_evolution_from(w: &Circuit, spec: &AnsatzSpec, gamma: &[f64], t: f64) -> Result<Circuit> {
    let mut v = w.clone();
    v.append(&build_diagonal(spec, gamma, t)?)?;
    v.append(&w.adjoint())?;
    Ok(v)
}

/// Program whose all-zeros probability is `kappa_t(x, x')`:
/// `V_t`, `U(x)`, `U(x')^dagger`, `V_t^dagger` applied in that order.
pub fn build_kernel_circuit(
    spec: &AnsatzSpec,
    x: &[f64],
    x_prime: &[f64],
    theta: &ParameterSet,
    t: f64,
) -> Result<Circuit> {
    theta.check(spec)?;
    let w = build_eigenvector_circuit(spec, &theta.beta)?;
    kernel_circuit_from(&w, spec, x, x_prime, theta, t)
}

/// Same as [`build_kernel_circuit`] with a prebuilt `W(beta)`.
pub(crate) fn kernel_circuit_from(
    w: &Circuit,
    spec: &AnsatzSpec,
    x: &[f64],
    x_prime: &[f64],
    theta: &ParameterSet,
    t: f64,
) -> Result<Circuit> {
    let v = time_evolution_from(w, spec, &theta.gamma, t)?;
    let mut c = v.clone();
    c.append(&build_embedding(spec, x, &theta.alpha)?)?;
    c.append(&build_embedding(spec, x_prime, &theta.alpha)?.adjoint())?;
    c.append(&v.adjoint())?;
    Ok(c)
}
