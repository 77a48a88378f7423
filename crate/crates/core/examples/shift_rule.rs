//! Parameter-shift gradient of one kernel element against central finite
//! differences.
//!
//! cargo run --release --example shift_rule

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tshk::ansatz::{build_kernel_circuit, prob_zero_and_gradient, AnsatzSpec, ParameterSet};

fn main() -> tshk::Result<()> {
    let spec = AnsatzSpec::qaoa_sel(3, 2, 1)?;
    let theta = ParameterSet::random(&spec, &mut ChaCha8Rng::seed_from_u64(1));
    let (x, xp, t) = ([0.3, 0.8], [0.6, 0.1], 0.7);
    let (k, grad) = prob_zero_and_gradient(&build_kernel_circuit(&spec, &x, &xp, &theta, t)?);
    println!("kappa = {k:.6}, {} parameters", grad.len());

    let flat = theta.to_flat();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, g) in grad.iter().enumerate() {
        let eval = |s: f64| -> tshk::Result<f64> {
            let mut f = flat.clone();
            f[i] += s;
            let th = ParameterSet::from_flat(&spec, &f)?;
            Ok(build_kernel_circuit(&spec, &x, &xp, &th, t)?.prob_all_zeros())
        };
        let fd = (eval(h)? - eval(-h)?) / (2.0 * h);
        worst = worst.max((fd - g).abs());
        if i % 6 == 0 {
            println!("  d/dtheta[{i:2}]  shift {g:+.8}  fd {fd:+.8}");
        }
    }
    println!("max |shift - fd| = {worst:.2e}");
    Ok(())
}
