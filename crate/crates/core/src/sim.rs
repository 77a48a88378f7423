//! Dense complex statevector simulator.
//!
//! Basis index bit `q` holds qubit `q`, so qubit 0 is the least significant bit and
//! the rightmost character of a sampled bitstring.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest register the dense engine accepts (2^24 amplitudes, 256 MiB).
pub const MAX_QUBITS: usize = 24;

/// Single gate of the kernel circuits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gate {
    /// `exp(-i angle X / 2)`
    Rx { qubit: usize, angle: f64 },
    /// `exp(-i angle Y / 2)`
    Ry { qubit: usize, angle: f64 },
    /// `exp(-i angle Z / 2)`
    Rz { qubit: usize, angle: f64 },
    Cx { control: usize, target: usize },
    /// `exp(-i angle Z_S)`: basis state `b` picks up `exp(-i angle prod_{j in S} (1 - 2 b_j))`.
    ZPhase { support: Vec<usize>, angle: f64 },
}

impl Gate {
    pub fn angle(&self) -> Option<f64> {
        match self {
            Gate::Rx { angle, .. }
            | Gate::Ry { angle, .. }
            | Gate::Rz { angle, .. }
            | Gate::ZPhase { angle, .. } => Some(*angle),
            Gate::Cx { .. } => None,
        }
    }

    /// Copy of the gate with its rotation angle replaced. CX is returned unchanged.
    pub fn with_angle(&self, new_angle: f64) -> Gate {
        let mut g = self.clone();
        match &mut g {
            Gate::Rx { angle, .. }
            | Gate::Ry { angle, .. }
            | Gate::Rz { angle, .. }
            | Gate::ZPhase { angle, .. } => *angle = new_angle,
            Gate::Cx { .. } => {}
        }
        g
    }

    pub fn inverse(&self) -> Gate {
        match self.angle() {
            Some(a) => self.with_angle(-a),
            None => self.clone(),
        }
    }

    pub fn qubits(&self) -> Vec<usize> {
        match self {
            Gate::Rx { qubit, .. } | Gate::Ry { qubit, .. } | Gate::Rz { qubit, .. } => {
                vec![*qubit]
            }
            Gate::Cx { control, target } => vec![*control, *target],
            Gate::ZPhase { support, .. } => support.clone(),
        }
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        let qs = self.qubits();
        if qs.is_empty() {
            return Err(Error::usage("gate acts on no qubits"));
        }
        for (k, &q) in qs.iter().enumerate() {
            if q >= n_qubits {
                return Err(Error::usage(format!(
                    "qubit index {q} out of range for a {n_qubits}-qubit register"
                )));
            }
            if qs[..k].contains(&q) {
                return Err(Error::usage(format!("repeated qubit index {q} in gate")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amplitudes: Vec<Complex64>,
}

impl StateVector {
    /// `|0...0>` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        Self::basis(n_qubits, 0)
    }

    /// Computational basis state `|index>`.
    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::config(format!(
                "qubit count {n_qubits} outside 1..={MAX_QUBITS}"
            )));
        }
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(Error::usage(format!(
                "basis index {index} out of range for {n_qubits} qubits"
            )));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(Self {
            n_qubits,
            amplitudes,
        })
    }

    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let dim = amplitudes.len();
        if dim < 2 || !dim.is_power_of_two() {
            return Err(Error::usage(format!(
                "amplitude count {dim} is not a power of two >= 2"
            )));
        }
        Ok(Self {
            n_qubits: dim.trailing_zeros() as usize,
            amplitudes,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Probability of reading out the all-zeros bitstring.
    pub fn prob_all_zeros(&self) -> f64 {
        self.amplitudes[0].norm_sqr()
    }

    /// Inner product `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Returns the state after `gate`, leaving `self` untouched.
    pub fn apply(&self, gate: &Gate) -> Result<StateVector> {
        let mut out = self.clone();
        out.apply_in_place(gate)?;
        Ok(out)
    }

    pub fn apply_in_place(&mut self, gate: &Gate) -> Result<()> {
        gate.validate(self.n_qubits)?;
        self.apply_unchecked(gate);
        Ok(())
    }

    pub fn apply_all<'a>(&mut self, gates: impl IntoIterator<Item = &'a Gate>) -> Result<()> {
        for g in gates {
            self.apply_in_place(g)?;
        }
        Ok(())
    }

    /// Gate application without index validation. Callers must have validated
    /// the gate against this register.
    pub(crate) fn apply_unchecked(&mut self, gate: &Gate) {
        let amps = &mut self.amplitudes;
        match *gate {
            Gate::Rx { qubit, angle } => {
                let (s, c) = (angle / 2.0).sin_cos();
                let m = [
                    [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
                    [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
                ];
                apply_1q(amps, qubit, m);
            }
            Gate::Ry { qubit, angle } => {
                let (s, c) = (angle / 2.0).sin_cos();
                let m = [
                    [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
                    [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
                ];
                apply_1q(amps, qubit, m);
            }
            Gate::Rz { qubit, angle } => {
                let lo = Complex64::from_polar(1.0, -angle / 2.0);
                let hi = Complex64::from_polar(1.0, angle / 2.0);
                let bit = 1usize << qubit;
                for (idx, a) in amps.iter_mut().enumerate() {
                    *a *= if idx & bit == 0 { lo } else { hi };
                }
            }
            Gate::Cx { control, target } => {
                let cbit = 1usize << control;
                let tbit = 1usize << target;
                for idx in 0..amps.len() {
                    if idx & cbit != 0 && idx & tbit == 0 {
                        amps.swap(idx, idx | tbit);
                    }
                }
            }
            Gate::ZPhase { ref support, angle } => {
                let mask = support.iter().fold(0usize, |m, &q| m | (1 << q));
                let even = Complex64::from_polar(1.0, -angle);
                let odd = Complex64::from_polar(1.0, angle);
                for (idx, a) in amps.iter_mut().enumerate() {
                    *a *= if (idx & mask).count_ones() % 2 == 0 {
                        even
                    } else {
                        odd
                    };
                }
            }
        }
    }

    /// Draws `shots` computational-basis samples by inverse-CDF lookup on a
    /// ChaCha8 stream seeded with `seed`.
    pub fn sample_counts(&self, shots: u64, seed: u64) -> Result<CountsMap> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_counts_with(shots, &mut rng)
    }

    pub fn sample_counts_with(&self, shots: u64, rng: &mut impl Rng) -> Result<CountsMap> {
        let outcomes = self.sample_outcomes(shots, rng)?;
        let mut hist: BTreeMap<usize, u64> = BTreeMap::new();
        for idx in outcomes {
            *hist.entry(idx).or_insert(0) += 1;
        }
        let counts = hist
            .into_iter()
            .map(|(idx, c)| (index_to_bitstring(idx, self.n_qubits), c))
            .collect();
        Ok(CountsMap {
            width: self.n_qubits,
            shots,
            counts,
        })
    }

    /// Basis-state index of each shot, in draw order.
    pub fn sample_outcomes(&self, shots: u64, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if shots == 0 {
            return Err(Error::usage("shots must be positive"));
        }
        let mut cdf = Vec::with_capacity(self.amplitudes.len());
        let mut acc = 0.0;
        for a in &self.amplitudes {
            acc += a.norm_sqr();
            cdf.push(acc);
        }
        Ok((0..shots)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
            })
            .collect())
    }
}

fn apply_1q(amps: &mut [Complex64], qubit: usize, m: [[Complex64; 2]; 2]) {
    let bit = 1usize << qubit;
    for idx in 0..amps.len() {
        if idx & bit == 0 {
            let a0 = amps[idx];
            let a1 = amps[idx | bit];
            amps[idx] = m[0][0] * a0 + m[0][1] * a1;
            amps[idx | bit] = m[1][0] * a0 + m[1][1] * a1;
        }
    }
}

/// Bitstring of `index` over `width` qubits, qubit 0 rightmost.
pub fn index_to_bitstring(index: usize, width: usize) -> String {
    format!("{index:0width$b}")
}

/// Histogram of measured bitstrings. Keys have exactly `width` characters with
/// qubit 0 as the rightmost character. Only observed keys need to be present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsMap {
    pub width: usize,
    pub shots: u64,
    pub counts: BTreeMap<String, u64>,
}

impl CountsMap {
    pub fn new(width: usize, counts: BTreeMap<String, u64>) -> Result<Self> {
        let shots = counts.values().sum();
        let map = CountsMap {
            width,
            shots,
            counts,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        let mut total = 0u64;
        for (key, &c) in &self.counts {
            if key.len() != self.width || !key.bytes().all(|b| b == b'0' || b == b'1') {
                return Err(Error::usage(format!(
                    "bitstring {key:?} is not a {}-bit key",
                    self.width
                )));
            }
            total += c;
        }
        if total != self.shots {
            return Err(Error::usage(format!(
                "counts sum to {total} but shots = {}",
                self.shots
            )));
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> u64 {
        self.counts.get(key).copied().unwrap_or(0)
    }

    /// Empirical probability of each key.
    pub fn distribution(&self) -> BTreeMap<String, f64> {
        let total = self.shots as f64;
        self.counts
            .iter()
            .map(|(k, &c)| (k.clone(), c as f64 / total))
            .collect()
    }
}
