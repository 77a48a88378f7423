//! Two univariate series, -sin(t) and -cos(t), on a single qubit. Prints the
//! learned weights, the cross-class kernel per slice and the loss trace ends.
//!
//! cargo run --release --example sincos_toy

use tshk::ansatz::AnsatzSpec;
use tshk::data::{gen_sincos, FeatureScaler};
use tshk::kernel::{gram_stack, KernelMode, TimeMap};
use tshk::qccnet::{train, TrainConfig};

fn main() -> tshk::Result<()> {
    let raw = gen_sincos(10, 0)?;
    let scaler = FeatureScaler::fit(&raw, 0.0, std::f64::consts::PI)?;
    let ds = scaler.apply(&raw)?;
    let spec = AnsatzSpec::ry_sel(1, 1, 1)?;
    let cfg = TrainConfig {
        iterations: 100,
        batch_size: 2,
        ..Default::default()
    };
    let out = train(&ds, &ds, &spec, TimeMap::default(), scaler, &cfg)?;
    let model = &out.model;
    let stack = gram_stack(&spec, &model.theta, &ds.instances, &model.evolution_times(), KernelMode::Exact)?;

    println!("   t      eta    K_t(sin, cos)");
    for (l, t) in model.times.iter().enumerate() {
        println!("{t:6.3}  {:.4}  {:.4}", model.eta.as_slice()[l], stack.mats[l][(0, 1)]);
    }
    if let (Some(first), Some(last)) = (out.trace.first(), out.trace.last()) {
        println!("loss {:.5} -> {:.5}", first.loss, last.loss);
    }
    Ok(())
}
