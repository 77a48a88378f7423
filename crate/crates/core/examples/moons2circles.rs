//! Train a QAOA-3-SEL-3 kernel on moons2circles and classify a fresh test set,
//! with and without time dependence in the evolution.
//!
//! cargo run --release --example moons2circles -- [restarts] [iterations]

use std::time::Instant;

use tshk::ansatz::AnsatzSpec;
use tshk::data::{gen_moons2circles, FeatureScaler, Moons2CirclesConfig};
use tshk::kernel::{cross_gram, gram_stack, KernelMode, TimeMap};
use tshk::qccnet::{train, TrainConfig};
use tshk::svm::{evaluate_combined, evaluate_vote};

fn main() -> tshk::Result<()> {
    env_logger::init();
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let restarts = args.first().copied().unwrap_or(10);
    let iterations = args.get(1).copied().unwrap_or(250);

    let split = |seed| {
        gen_moons2circles(&Moons2CirclesConfig {
            seed,
            ..Default::default()
        })
    };
    let (train_raw, val_raw, test_raw) = (split(0)?, split(1)?, split(2)?);
    let scaler = FeatureScaler::fit(&train_raw, 0.0, 1.0)?;
    let train_ds = scaler.apply(&train_raw)?;
    let val_ds = scaler.apply(&val_raw)?;
    let test_ds = scaler.apply(&test_raw)?;

    let spec = AnsatzSpec::qaoa_sel(3, 2, 3)?;
    let cfg = TrainConfig {
        iterations,
        restarts,
        ..Default::default()
    };

    for (label, time_map) in [
        ("time-dependent", TimeMap::default()),
        ("fixed t = 1", TimeMap { scale: 1.0, fixed: Some(1.0) }),
    ] {
        let start = Instant::now();
        let out = train(&train_ds, &val_ds, &spec, time_map, scaler.clone(), &cfg)?;
        let model = &out.model;
        let train_stack = gram_stack(
            &model.spec,
            &model.theta,
            &train_ds.instances,
            &model.evolution_times(),
            KernelMode::Exact,
        )?;
        let (test_mats, test_combined) =
            cross_gram(model, &train_ds.instances, &test_ds.instances, KernelMode::Exact)?;
        let train_combined = tshk::kernel::combined_kernel(&train_stack.mats, &model.eta)?;
        let y_tr = train_ds.labels();
        let y_te = test_ds.labels();
        let vote = evaluate_vote(&train_stack.mats, &y_tr, &test_mats, &y_te, &model.eta, 100.0)?;
        let combined = evaluate_combined(&train_combined, &y_tr, &test_combined, &y_te, 100.0)?;
        println!("{label}: best restart {} of {restarts}", out.best_restart);
        println!("  eta = {:.3?}", model.eta.as_slice());
        println!("  vote accuracy     {:.3}", vote.report.accuracy);
        println!("  combined accuracy {:.3}", combined.report.accuracy);
        println!("  elapsed {:.1?}", start.elapsed());
    }
    Ok(())
}
