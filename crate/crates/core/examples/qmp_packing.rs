//! Pack two-qubit kernel programs onto a 127-qubit heavy-hex device and a
//! 127-qubit line, run them jointly, and compare the recovered histograms with
//! serial runs. A second pass injects readout flips into the packed run.
//!
//! cargo run --release --example qmp_packing

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tshk::ansatz::{build_kernel_circuit, AnsatzSpec, ParameterSet};
use tshk::qmp::{
    heavy_hex_layout_35, pack, packed_calls, result_fidelity, run_packed, run_serial, serial_calls, trf,
    window_counts, Device,
};

fn main() -> tshk::Result<()> {
    let spec = AnsatzSpec::qaoa_sel(2, 1, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let theta = ParameterSet::random(&spec, &mut rng);
    let circuits = (0..35)
        .map(|k| build_kernel_circuit(&spec, &[0.02 * k as f64], &[0.7], &theta, 0.5))
        .collect::<tshk::Result<Vec<_>>>()?;

    let hex = heavy_hex_layout_35();
    let line = pack(usize::MAX, 2, &Device::Line(127), 1)?;
    println!("TRF heavy-hex {}  line {}", trf(&hex), trf(&line));

    let shots = 10_000;
    for flip in [0.0, 0.02] {
        let joint = run_packed(&hex, &circuits, shots, 11, flip)?;
        let mut fids = Vec::new();
        for a in &hex.assignments {
            let packed = window_counts(&joint, &a.qubits)?.distribution();
            let serial = run_serial(&circuits[a.circuit], a.circuit, shots, 11)?.distribution();
            if let Ok(f) = result_fidelity(&packed, &serial, 4) {
                fids.push(f);
            }
        }
        let mean = fids.iter().sum::<f64>() / fids.len() as f64;
        let min = fids.iter().copied().fold(f64::INFINITY, f64::min);
        println!("flip {flip:.2}: fidelity mean {mean:.5} min {min:.5} over {} windows", fids.len());
    }

    let serial = serial_calls(50, 50, 150);
    println!("gun-point (p = 50): {serial} serial calls, {} packed", packed_calls(serial, trf(&hex)));
    Ok(())
}
