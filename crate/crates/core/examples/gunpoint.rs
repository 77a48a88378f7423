//! Gun-point classification with an n = 2 QAOA-3-SEL-3 kernel.
//!
//! cargo run --release --example gunpoint -- [decimation] [restarts] [iterations]
//!
//! Defaults: decimation 3 (p = 50), 5 restarts, 500 iterations. Reads the
//! UCR files from `data/gunpoint/` at the workspace root.

use std::path::PathBuf;
use std::time::Instant;

use tshk::ansatz::AnsatzSpec;
use tshk::data::{load_ucr, FeatureScaler};
use tshk::kernel::{combined_kernel, cross_gram, gram_stack, KernelMode, TimeMap};
use tshk::qccnet::{train, TrainConfig};
use tshk::svm::evaluate_combined;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/gunpoint")
}

fn main() -> tshk::Result<()> {
    env_logger::init();
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let decimation = args.first().copied().unwrap_or(3);
    let restarts = args.get(1).copied().unwrap_or(5);
    let iterations = args.get(2).copied().unwrap_or(500);

    let dir = data_dir();
    let (train_raw, test_raw) = load_ucr(&dir.join("GunPoint_TRAIN.tsv"), &dir.join("GunPoint_TEST.tsv"))?;
    let train_raw = train_raw.decimate(decimation)?;
    let test_raw = test_raw.decimate(decimation)?;
    let scaler = FeatureScaler::fit(&train_raw, 0.0, 1.0)?;
    let train_ds = scaler.apply(&train_raw)?;
    let test_ds = scaler.apply(&test_raw)?;
    println!(
        "train {} x p={}, test {}",
        train_ds.len(),
        train_ds.p(),
        test_ds.len()
    );

    let spec = AnsatzSpec::qaoa_sel(2, 1, 3)?;
    let cfg = TrainConfig {
        iterations,
        restarts,
        ..Default::default()
    };
    let start = Instant::now();
    let out = train(&train_ds, &train_ds, &spec, TimeMap::default(), scaler, &cfg)?;
    let model = &out.model;
    println!("trained in {:.1?}, best restart {}", start.elapsed(), out.best_restart);

    let stack = gram_stack(&model.spec, &model.theta, &train_ds.instances, &model.evolution_times(), KernelMode::Exact)?;
    let k_train = combined_kernel(&stack.mats, &model.eta)?;
    let (_, k_test) = cross_gram(model, &train_ds.instances, &test_ds.instances, KernelMode::Exact)?;
    let eval = evaluate_combined(&k_train, &train_ds.labels(), &k_test, &test_ds.labels(), 100.0)?;
    let r = &eval.report;
    println!(
        "F1 {:.3}  balanced accuracy {:.3}  ROC AUC {:.3}  alignment train {:.3} test {:.3}",
        r.f1,
        r.balanced_accuracy,
        r.roc_auc,
        r.alignment_train.unwrap_or(f64::NAN),
        r.alignment_test.unwrap_or(f64::NAN)
    );
    println!("eta_t:");
    for (t, w) in model.times.iter().zip(model.eta.as_slice()) {
        println!("  {t:.3}  {w:.4}  {}", "#".repeat((w * 400.0).round() as usize));
    }
    Ok(())
}
