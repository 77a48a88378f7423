//! Parameter-shift derivatives of the all-zeros probability.
//!
//! Every parameterized gate is `exp(-i phi P / 2)` for a Pauli string `P`, so
//! `d f / d phi = (f(phi + pi/2) - f(phi - pi/2)) / 2`. `ZPhase` stores
//! `angle = phi / 2`, which turns into a shift of `pi/4` on the stored angle and a
//! factor of 2 on the coefficient. Chain-rule factors from the provenance tag
//! (data values, time, adjoint signs) are folded into the weight.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use num_complex::Complex64;

use super::Circuit;
use crate::error::{Error, Result};
use crate::sim::{Gate, StateVector};

/// One occurrence of a parameter: the derivative contribution is
/// `weight * (f(angle + shift) - f(angle - shift))` with the gate at `op_index`
/// shifted and everything else held fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftTerm {
    pub op_index: usize,
    /// Shift applied to the gate's stored angle.
    pub shift: f64,
    pub weight: f64,
}

fn term_for(gate: &Gate, op_index: usize, coeff: f64) -> Option<ShiftTerm> {
    match gate {
        Gate::Rx { .. } | Gate::Ry { .. } | Gate::Rz { .. } => Some(ShiftTerm {
            op_index,
            shift: FRAC_PI_2,
            weight: 0.5 * coeff,
        }),
        Gate::ZPhase { .. } => Some(ShiftTerm {
            op_index,
            shift: FRAC_PI_4,
            weight: coeff,
        }),
        Gate::Cx { .. } => None,
    }
}

/// All shift evaluations needed for `d P(0...0) / d theta[param_index]`.
pub fn shift_rule_tangents(circuit: &Circuit, param_index: usize) -> Result<Vec<ShiftTerm>> {
    if param_index >= circuit.n_params() {
        return Err(Error::usage(format!(
            "unknown parameter {param_index} ({} registered)",
            circuit.n_params()
        )));
    }
    Ok(circuit
        .ops()
        .iter()
        .enumerate()
        .filter_map(|(i, op)| match op.param {
            Some(p) if p.index == param_index => term_for(&op.gate, i, p.coeff),
            _ => None,
        })
        .collect())
}

/// Derivative by re-simulating every shifted circuit from scratch.
pub fn shift_rule_derivative(circuit: &Circuit, param_index: usize) -> Result<f64> {
    let terms = shift_rule_tangents(circuit, param_index)?;
    let mut total = 0.0;
    for term in terms {
        let eval = |delta: f64| {
            let mut shifted = circuit.clone();
            let op = &mut shifted.ops[term.op_index];
            let angle = op.gate.angle().expect("parameterized gates carry angles");
            op.gate = op.gate.with_angle(angle + delta);
            shifted.prob_all_zeros()
        };
        total += term.weight * (eval(term.shift) - eval(-term.shift));
    }
    Ok(total)
}

/// `P(0...0)` and its full gradient over the circuit's parameter vector.
///
/// Each shifted circuit is still evaluated exactly, but with a single forward
/// and backward sweep: for gate `g` the shifted amplitude is
/// `<b_g| G_g(angle +- s) |psi_g>` where `psi_g` is the state before `g` and
/// `b_g = (G_{last} ... G_{g+1})^dagger |0>`.
pub fn prob_zero_and_gradient(circuit: &Circuit) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; circuit.n_params()];
    let ops = circuit.ops();
    let mut psi = StateVector::zero(circuit.n_qubits()).expect("validated register");
    let mut saved: Vec<Option<StateVector>> = Vec::with_capacity(ops.len());
    for op in ops {
        saved.push(op.param.map(|_| psi.clone()));
        psi.apply_unchecked(&op.gate);
    }
    let value = psi.prob_all_zeros();

    let mut bra = StateVector::zero(circuit.n_qubits()).expect("validated register");
    for (g, op) in ops.iter().enumerate().rev() {
        if let (Some(p), Some(before)) = (op.param, saved[g].take()) {
            if let Some(term) = term_for(&op.gate, g, p.coeff) {
                if term.weight != 0.0 {
                    let angle = op.gate.angle().expect("parameterized gates carry angles");
                    let amp = |delta: f64| -> Complex64 {
                        let mut s = before.clone();
                        s.apply_unchecked(&op.gate.with_angle(angle + delta));
                        bra.inner(&s)
                    };
                    let plus = amp(term.shift).norm_sqr();
                    let minus = amp(-term.shift).norm_sqr();
                    grad[p.index] += term.weight * (plus - minus);
                }
            }
        }
        bra.apply_unchecked(&op.gate.inverse());
    }
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn finite_difference(
        spec: &AnsatzSpec,
        x: &[f64],
        xp: &[f64],
        theta: &ParameterSet,
        t: f64,
        k: usize,
    ) -> f64 {
        let h = 1e-6;
        let mut flat = theta.to_flat();
        flat[k] += h;
        let up = build_kernel_circuit(spec, x, xp, &ParameterSet::from_flat(spec, &flat).unwrap(), t)
            .unwrap()
            .prob_all_zeros();
        flat[k] -= 2.0 * h;
        let dn = build_kernel_circuit(spec, x, xp, &ParameterSet::from_flat(spec, &flat).unwrap(), t)
            .unwrap()
            .prob_all_zeros();
        (up - dn) / (2.0 * h)
    }

    #[test]
    fn single_ry_matches_finite_difference() {
        let mut c = Circuit::new(1, 1);
        let beta = 0.7;
        c.push(Gate::Ry { qubit: 0, angle: beta }, Some(ParamRef { index: 0, coeff: 1.0 }))
            .unwrap();
        let d = shift_rule_derivative(&c, 0).unwrap();
        // P = cos^2(beta/2), dP/dbeta = -sin(beta)/2
        let fd = {
            let h = 1e-6;
            let f = |b: f64| (b / 2.0).cos().powi(2);
            (f(beta + h) - f(beta - h)) / (2.0 * h)
        };
        assert!((d - fd).abs() <= 1e-5 * fd.abs());
        assert!((d + beta.sin() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn repeated_parameter_sums_occurrences() {
        let mut c = Circuit::new(1, 1);
        let a = 0.4;
        c.push(Gate::Ry { qubit: 0, angle: a }, Some(ParamRef { index: 0, coeff: 1.0 }))
            .unwrap();
        c.push(Gate::Rx { qubit: 0, angle: 2.0 * a }, Some(ParamRef { index: 0, coeff: 2.0 }))
            .unwrap();
        let terms = shift_rule_tangents(&c, 0).unwrap();
        assert_eq!(terms.len(), 2);
        let d = shift_rule_derivative(&c, 0).unwrap();
        let f = |a: f64| {
            let mut s = StateVector::zero(1).unwrap();
            s.apply_in_place(&Gate::Ry { qubit: 0, angle: a }).unwrap();
            s.apply_in_place(&Gate::Rx { qubit: 0, angle: 2.0 * a }).unwrap();
            s.prob_all_zeros()
        };
        let h = 1e-6;
        let fd = (f(a + h) - f(a - h)) / (2.0 * h);
        assert!((d - fd).abs() <= 1e-5 * fd.abs().max(1e-3));
    }

    #[test]
    fn gamma_derivative_vanishes_at_t0() {
        let spec = AnsatzSpec::qaoa_sel(2, 1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let th = ParameterSet::random(&spec, &mut rng);
        let c = build_kernel_circuit(&spec, &[0.3], &[1.9], &th, 0.0).unwrap();
        let (_, g) = prob_zero_and_gradient(&c);
        for k in spec.gamma_offset()..spec.n_params() {
            assert_eq!(shift_rule_derivative(&c, k).unwrap(), 0.0);
            assert_eq!(g[k], 0.0);
        }
    }

    #[test]
    fn unknown_parameter_rejected() {
        let c = Circuit::new(1, 2);
        assert!(shift_rule_tangents(&c, 2).is_err());
    }

    #[test]
    fn sweep_matches_naive_shift_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for case in 0..50 {
            let n = rng.random_range(1..=4);
            let d = rng.random_range(1..=n);
            let g = rng.random_range(1..=2);
            let spec = if case % 3 == 0 {
                AnsatzSpec::ry_sel(n, d, g).unwrap()
            } else {
                AnsatzSpec::qaoa_sel(n, d, g).unwrap()
            };
            let spec = spec.with_locality(rng.random_range(1..=n)).unwrap();
            let th = ParameterSet::random(&spec, &mut rng);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..PI)).collect();
            let xp: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..PI)).collect();
            let t = rng.random_range(0.0..1.5);
            let c = build_kernel_circuit(&spec, &x, &xp, &th, t).unwrap();
            let (v, grad) = prob_zero_and_gradient(&c);
            assert!((v - c.prob_all_zeros()).abs() < 1e-14);
            for k in 0..spec.n_params() {
                let naive = shift_rule_derivative(&c, k).unwrap();
                assert!((naive - grad[k]).abs() < 1e-12, "case {case} k {k}");
                let fd = finite_difference(&spec, &x, &xp, &th, t, k);
                let err = (grad[k] - fd).abs();
                assert!(
                    err <= 1e-5 * fd.abs() || err <= 1e-8,
                    "case {case} param {k}: shift {} fd {fd}",
                    grad[k]
                );
            }
        }
    }
}
