//! Embedding overlap F(dt) of a random two-qubit evolution, next to the same
//! evolution with every gamma zeroed (which never leaves |00>).
//!
//! cargo run --release --example time_probe -- [seed]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tshk::ansatz::{AnsatzSpec, ParameterSet};
use tshk::timeprobe::{delta_grid, probe};

fn main() -> tshk::Result<()> {
    let seed = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(7);
    let spec = AnsatzSpec::qaoa_sel(2, 1, 3)?;
    let theta = ParameterSet::random(&spec, &mut ChaCha8Rng::seed_from_u64(seed));
    let deltas = delta_grid(4.0, 21)?;
    let learned = probe(&spec, &theta.beta, &theta.gamma, &deltas, &[])?;
    let frozen = probe(&spec, &theta.beta, &vec![0.0; spec.gamma_len()], &deltas, &[])?;
    println!("   dt   F(dt)   frozen");
    for ((d, f), g) in deltas.iter().zip(&learned.values).zip(&frozen.values) {
        println!("{d:5.2}  {f:.4}  {g:.4}  {}", "*".repeat((f * 40.0).round() as usize));
    }
    Ok(())
}
