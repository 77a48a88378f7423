//! Corrupt the Gram matrices of a quickly trained gun-point kernel with
//! symmetric noise, then compare two pipelines over several noise draws:
//! weights and SVM on the noisy matrices as they are, or on the same matrices
//! shifted back to the PSD cone slice by slice.
//!
//! cargo run --release --example tikhonov_rescue -- [sigma] [draws]

use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tshk::ansatz::AnsatzSpec;
use tshk::data::{load_ucr, FeatureScaler};
use tshk::kernel::{combined_kernel, cross_gram, gram_stack, KernelMode, TimeMap};
use tshk::qccnet::{train, weights_from_stack, TrainConfig};
use tshk::svm::{evaluate_combined, tikhonov_regularize};
use tshk::util::min_eigenvalue;

fn main() -> tshk::Result<()> {
    let mut args = std::env::args().skip(1);
    let sigma: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0.05);
    let draws: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(10);

    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/gunpoint");
    let (a, b) = load_ucr(&dir.join("GunPoint_TRAIN.tsv"), &dir.join("GunPoint_TEST.tsv"))?;
    let (a, b) = (a.decimate(3)?, b.decimate(3)?);
    let scaler = FeatureScaler::fit(&a, 0.0, 1.0)?;
    let (tr, te) = (scaler.apply(&a)?, scaler.apply(&b)?);
    let spec = AnsatzSpec::qaoa_sel(2, 1, 3)?;
    let cfg = TrainConfig {
        iterations: 100,
        restarts: 2,
        ..Default::default()
    };
    let model = train(&tr, &tr, &spec, TimeMap::default(), scaler, &cfg)?.model;
    let stack = gram_stack(&spec, &model.theta, &tr.instances, &model.evolution_times(), KernelMode::Exact)?;
    let (test_mats, _) = cross_gram(&model, &tr.instances, &te.instances, KernelMode::Exact)?;
    let (y_tr, y_te) = (tr.labels(), te.labels());
    let noise = Normal::new(0.0, sigma).expect("valid sigma");

    let mut sums = [[0.0; 3]; 2];
    for draw in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(draw);
        let noisy: Vec<DMatrix<f64>> = stack
            .mats
            .iter()
            .map(|k| {
                let mut k = k.clone();
                for i in 0..k.nrows() {
                    for j in i + 1..k.ncols() {
                        let e = noise.sample(&mut rng);
                        k[(i, j)] += e;
                        k[(j, i)] += e;
                    }
                }
                k
            })
            .collect();
        let noisy_test: Vec<DMatrix<f64>> = test_mats.iter().map(|k| k.map(|v| v + noise.sample(&mut rng))).collect();
        if draw == 0 {
            println!("slice 0 min eigenvalue: clean {:.2e}  noisy {:.2e}", min_eigenvalue(&stack.mats[0]), min_eigenvalue(&noisy[0]));
        }
        for (k, regularize) in [false, true].into_iter().enumerate() {
            let mats = if regularize {
                noisy.iter().map(tikhonov_regularize).collect::<tshk::Result<Vec<_>>>()?
            } else {
                noisy.clone()
            };
            let (eta, _) = weights_from_stack(&mats, &y_tr, cfg.lambda, 1e-10, 100_000)?;
            let k_train = combined_kernel(&mats, &eta)?;
            let k_test = combined_kernel(&noisy_test, &eta)?;
            let r = evaluate_combined(&k_train, &y_tr, &k_test, &y_te, 100.0)?.report;
            for (s, v) in sums[k].iter_mut().zip([r.f1, r.balanced_accuracy, r.roc_auc]) {
                *s += v / draws as f64;
            }
        }
    }
    for (name, m) in ["noisy", "regularized"].iter().zip(sums) {
        println!("{name:>12}: mean F1 {:.3}  balanced accuracy {:.3}  ROC AUC {:.3}", m[0], m[1], m[2]);
    }
    Ok(())
}
