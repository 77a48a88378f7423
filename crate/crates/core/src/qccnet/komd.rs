//! KOMD margin objective and its per-class-simplex dual solver.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::check_symmetric;

/// `min_phi (1 - lambda) phi^T Y K Y phi + lambda |phi|^2` over per-class simplices.
#[derive(Debug, Clone, PartialEq)]
pub struct KomdProblem {
    pub k: DMatrix<f64>,
    pub y: Vec<f64>,
    pub lambda: f64,
}

impl KomdProblem {
    pub fn new(k: DMatrix<f64>, y: Vec<f64>, lambda: f64) -> Result<Self> {
        check_symmetric(&k, 1e-9, "K_e")?;
        if k.nrows() != y.len() {
            return Err(Error::usage(format!(
                "K_e is {}x{} but there are {} labels",
                k.nrows(),
                k.ncols(),
                y.len()
            )));
        }
        if y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::usage("labels must be +1/-1"));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::config(format!("lambda = {lambda} is outside [0, 1]")));
        }
        let pos = y.iter().filter(|&&v| v > 0.0).count();
        if pos == 0 || pos == y.len() {
            return Err(Error::Training(
                "the margin loss is undefined unless both classes are present".into(),
            ));
        }
        Ok(KomdProblem { k, y, lambda })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Hessian `2 ((1 - lambda) Y K Y + lambda I)`; the loss is `phi^T H phi / 2`.
    fn hessian(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut h = DMatrix::from_fn(n, n, |i, j| {
            2.0 * (1.0 - self.lambda) * self.y[i] * self.y[j] * self.k[(i, j)]
        });
        for i in 0..n {
            h[(i, i)] += 2.0 * self.lambda;
        }
        h
    }

    fn classes(&self) -> [Vec<usize>; 2] {
        let pos = (0..self.n()).filter(|&i| self.y[i] > 0.0).collect();
        let neg = (0..self.n()).filter(|&i| self.y[i] < 0.0).collect();
        [pos, neg]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub phi: Vec<f64>,
    pub loss_value: f64,
    /// Norm of the projected-gradient mapping at `phi`; zero exactly at the optimum.
    pub kkt_residual: f64,
    pub iterations: usize,
}

pub fn komd_loss(problem: &KomdProblem, phi: &[f64]) -> Result<f64> {
    if phi.len() != problem.n() {
        return Err(Error::usage(format!(
            "phi has length {}, expected {}",
            phi.len(),
            problem.n()
        )));
    }
    let yphi: Vec<f64> = phi.iter().zip(&problem.y).map(|(p, y)| p * y).collect();
    let v = DVector::from_column_slice(&yphi);
    let quad = v.dot(&(&problem.k * &v));
    let sq: f64 = phi.iter().map(|p| p * p).sum();
    Ok((1.0 - problem.lambda) * quad + problem.lambda * sq)
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

fn project(classes: &[Vec<usize>; 2], v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(v.len());
    for idx in classes {
        let part: Vec<f64> = idx.iter().map(|&i| v[i]).collect();
        for (&i, x) in idx.iter().zip(project_simplex(&part)) {
            out[i] = x;
        }
    }
    out
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |a, e| a.max(e.abs()))
}

struct Solver<'a> {
    h: DMatrix<f64>,
    classes: [Vec<usize>; 2],
    step: f64,
    problem: &'a KomdProblem,
}

impl Solver<'_> {
    fn residual(&self, phi: &DVector<f64>) -> f64 {
        let g = &self.h * phi;
        let moved = project(&self.classes, &(phi - &g * self.step));
        (phi - moved).norm() / self.step
    }

    /// Solve the equality-constrained problem on the current support exactly.
    fn polish(&self, phi: &DVector<f64>) -> Option<DVector<f64>> {
        let support: Vec<usize> = (0..phi.len()).filter(|&i| phi[i] > 0.0).collect();
        let m = support.len();
        let mut a = DMatrix::zeros(m + 2, m + 2);
        let mut rhs = DVector::zeros(m + 2);
        for (r, &i) in support.iter().enumerate() {
            for (c, &j) in support.iter().enumerate() {
                a[(r, c)] = self.h[(i, j)];
            }
            let cls = if self.problem.y[i] > 0.0 { m } else { m + 1 };
            a[(r, cls)] = -1.0;
            a[(cls, r)] = 1.0;
        }
        rhs[m] = 1.0;
        rhs[m + 1] = 1.0;
        let sol = a.lu().solve(&rhs)?;
        let mut out = DVector::zeros(phi.len());
        for (r, &i) in support.iter().enumerate() {
            if !sol[r].is_finite() || sol[r] < 0.0 {
                return None;
            }
            out[i] = sol[r];
        }
        Some(out)
    }
}

/// Accelerated projected gradient (FISTA with adaptive restart, step `1/L`,
/// `L = 2((1 - lambda)|K|_2 + lambda)`), interleaved with an exact solve on
/// the active support. Stops when the KKT residual drops to `tol`.
pub fn solve_inner(problem: &KomdProblem, tol: f64, max_iter: usize) -> Result<DualSolution> {
    let n = problem.n();
    let classes = problem.classes();
    let lip = 2.0 * ((1.0 - problem.lambda) * spectral_norm(&problem.k) + problem.lambda);
    let solver = Solver {
        h: problem.hessian(),
        classes,
        step: if lip > 0.0 { 1.0 / lip } else { 1.0 },
        problem,
    };
    let mut phi = DVector::zeros(n);
    for idx in &solver.classes {
        for &i in idx {
            phi[i] = 1.0 / idx.len() as f64;
        }
    }
    let mut y = phi.clone();
    let mut t = 1.0f64;
    let mut residual = solver.residual(&phi);
    let mut iterations = 0;
    const POLISH_EVERY: usize = 25;
    while residual > tol && iterations < max_iter {
        iterations += 1;
        let g = &solver.h * &y;
        let next = project(&solver.classes, &(&y - &g * solver.step));
        // restart momentum when it points uphill
        if (&y - &next).dot(&(&next - &phi)) > 0.0 {
            t = 1.0;
            y = next.clone();
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &next + (&next - &phi) * ((t - 1.0) / t_next);
            t = t_next;
        }
        phi = next;
        residual = solver.residual(&phi);
        if residual > tol && iterations % POLISH_EVERY == 0 {
            if let Some(p) = solver.polish(&phi) {
                let r = solver.residual(&p);
                if r < residual {
                    phi = p;
                    residual = r;
                    y = phi.clone();
                    t = 1.0;
                }
            }
        }
    }
    if residual > tol {
        if let Some(p) = solver.polish(&phi) {
            let r = solver.residual(&p);
            if r < residual {
                phi = p;
                residual = r;
            }
        }
    }
    if residual > tol {
        log::debug!("inner solver stopped at residual {residual:e} after {iterations} iterations");
    }
    let phi: Vec<f64> = phi.iter().copied().collect();
    let loss_value = komd_loss(problem, &phi)?;
    if !loss_value.is_finite() {
        return Err(Error::Training("non-finite margin loss".into()));
    }
    Ok(DualSolution {
        phi,
        loss_value,
        kkt_residual: residual,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose()
    }

    #[test]
    fn loss_examples() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let p = KomdProblem::new(k.clone(), vec![1.0, -1.0], 0.1).unwrap();
        assert!((komd_loss(&p, &[1.0, 1.0]).unwrap() - 1.1).abs() < 1e-15);
        assert_eq!(komd_loss(&p, &[0.0, 0.0]).unwrap(), 0.0);
        let p1 = KomdProblem::new(k, vec![1.0, -1.0], 1.0).unwrap();
        assert_eq!(komd_loss(&p1, &[0.3, 2.0]).unwrap(), 0.09 + 4.0);
        assert!(komd_loss(&p1, &[1.0]).is_err());
    }

    #[test]
    fn single_class_rejected() {
        let k = DMatrix::identity(2, 2);
        assert!(matches!(
            KomdProblem::new(k, vec![1.0, 1.0], 0.1),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn forced_and_symmetric_solutions() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let s = solve_inner(&KomdProblem::new(k, vec![1.0, -1.0], 0.1).unwrap(), 1e-12, 1000).unwrap();
        assert_eq!(s.phi, vec![1.0, 1.0]);
        let p = KomdProblem::new(DMatrix::zeros(4, 4), vec![1.0, -1.0, 1.0, -1.0], 0.5).unwrap();
        let s = solve_inner(&p, 1e-12, 1000).unwrap();
        for v in &s.phi {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_cases() {
        assert_eq!(project_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[0.0, 0.0, 0.0]);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn feasibility_and_first_order_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for case in 0..50 {
            let n = rng.random_range(2..=10);
            let mut y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
            y.swap(0, n - 1);
            let p = KomdProblem::new(random_psd(&mut rng, n), y.clone(), rng.random_range(0.05..0.95)).unwrap();
            let s = solve_inner(&p, 1e-10, 10_000).unwrap();
            let (mut sp, mut sn) = (0.0, 0.0);
            for (v, yi) in s.phi.iter().zip(&y) {
                assert!(*v >= 0.0);
                if *yi > 0.0 { sp += v } else { sn += v }
            }
            assert!((sp - 1.0).abs() < 1e-8 && (sn - 1.0).abs() < 1e-8, "case {case}");
            assert!(s.kkt_residual <= 1e-10, "case {case} residual {}", s.kkt_residual);
            let classes = p.classes();
            for _ in 0..20 {
                let dir = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                let phi = DVector::from_column_slice(&s.phi);
                let moved = project(&classes, &(&phi + dir.normalize() * 1e-3));
                let step = &moved - &phi;
                let target = if step.norm() > 0.0 { &phi + step.normalize() * 1e-3 } else { phi.clone() };
                let q = project(&classes, &target);
                let lq = komd_loss(&p, q.as_slice()).unwrap();
                assert!(lq >= s.loss_value - 1e-8, "case {case}");
            }
        }
    }

    proptest! {
        #[test]
        fn projection_lands_on_simplex(v in prop::collection::vec(-5.0f64..5.0, 1..12)) {
            let p = project_simplex(&v);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn loss_non_increasing_in_lambda(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            // phi^T Y K Y phi = 6 >= |phi|^2 = 2 here
            let k = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let phi = [1.0, 1.0];
            let f = |l: f64| komd_loss(&KomdProblem::new(k.clone(), vec![1.0, -1.0], l).unwrap(), &phi).unwrap();
            prop_assert!(f(hi) <= f(lo) + 1e-15);
        }
    }
}
