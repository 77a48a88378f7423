use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam step in the ascent direction.
pub fn adam_step(
    params: &[f64],
    grad: &[f64],
    state: &AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> (Vec<f64>, AdamState) {
    assert_eq!(params.len(), grad.len(), "parameter and gradient lengths differ");
    assert_eq!(params.len(), state.m.len(), "optimizer state has the wrong length");
    let (b1, b2) = betas;
    let step = state.step + 1;
    let c1 = 1.0 - b1.powi(step as i32);
    let c2 = 1.0 - b2.powi(step as i32);
    let mut m = state.m.clone();
    let mut v = state.v.clone();
    let mut out = params.to_vec();
    for k in 0..params.len() {
        m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
        v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
        let m_hat = m[k] / c1;
        let v_hat = v[k] / c2;
        out[k] += lr * m_hat / (v_hat.sqrt() + eps);
    }
    (out, AdamState { m, v, step })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (p, s) = adam_step(&[1.0, -2.0], &[0.0, 0.0], &AdamState::new(2), 0.05, (0.9, 0.999), 1e-8);
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (p, _) = adam_step(&[0.0], &[3.0], &AdamState::new(1), 0.05, (0.9, 0.999), 1e-8);
        let expected = 0.05 * 3.0 / (3.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn matches_reference_trace() {
        // hand-rolled reference for two constant-gradient steps
        let (lr, b1, b2, eps, g) = (0.1, 0.8, 0.9, 1e-6, -0.5);
        let mut x = 1.0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - f64::powi(b1, t));
            let vh = v / (1.0 - f64::powi(b2, t));
            x += lr * mh / (vh.sqrt() + eps);
        }
        let mut st = AdamState::new(1);
        let mut p = vec![1.0];
        for _ in 0..2 {
            let (np, ns) = adam_step(&p, &[g], &st, lr, (b1, b2), eps);
            p = np;
            st = ns;
        }
        assert!((p[0] - x).abs() < 1e-15);
    }
}
