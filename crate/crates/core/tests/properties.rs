use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tshk::ansatz::{build_kernel_circuit, AnsatzSpec, Circuit, Embedding, ParameterSet};
use tshk::data::{Dataset, TimeSeriesInstance};
use tshk::kernel::{kappa_t, KernelMode};
use tshk::qccnet::extract_weights;
use tshk::qmp::{pack, partial_measurement, run_packed, run_serial, window_counts, Device};

fn spec(n: usize, d: usize) -> AnsatzSpec {
    AnsatzSpec::new(n, d, Embedding::Qaoa { layers: 1 }, 1).unwrap()
}

fn theta(spec: &AnsatzSpec, seed: u64) -> ParameterSet {
    ParameterSet::random(spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn kernel_circuit(spec: &AnsatzSpec, th: &ParameterSet, x: &[f64], y: &[f64], t: f64) -> Circuit {
    build_kernel_circuit(spec, x, y, th, t).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_is_a_symmetric_probability(
        n in 1usize..4,
        seed in any::<u64>(),
        x in prop::collection::vec(0.0f64..3.2, 2),
        y in prop::collection::vec(0.0f64..3.2, 2),
        t in 0.0f64..2.0,
    ) {
        let s = spec(n, 2);
        let th = theta(&s, seed);
        let kxy = kappa_t(&s, &th, &x, &y, t, KernelMode::Exact).unwrap();
        let kyx = kappa_t(&s, &th, &y, &x, t, KernelMode::Exact).unwrap();
        let kxx = kappa_t(&s, &th, &x, &x, t, KernelMode::Exact).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&kxy));
        prop_assert!((kxy - kyx).abs() < 1e-10);
        prop_assert!((kxx - 1.0).abs() < 1e-10);
        let state = kernel_circuit(&s, &th, &x, &y, t).run();
        prop_assert!((state.norm_sqr() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn shot_estimates_stay_in_unit_interval(
        seed in any::<u64>(),
        shots in 1u64..300,
        x in prop::collection::vec(0.0f64..3.2, 2),
        y in prop::collection::vec(0.0f64..3.2, 2),
    ) {
        let s = spec(2, 2);
        let th = theta(&s, seed);
        let mode = KernelMode::Shots { count: shots, seed };
        let k = kappa_t(&s, &th, &x, &y, 0.7, mode).unwrap();
        prop_assert!((0.0..=1.0).contains(&k));
        prop_assert!((k * shots as f64 - (k * shots as f64).round()).abs() < 1e-9);
    }

    #[test]
    fn extracted_weights_lie_on_the_simplex(
        seed in any::<u64>(),
        p in 1usize..6,
        n in 4usize..9,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let mats: Vec<DMatrix<f64>> = (0..p)
            .map(|_| {
                let b = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
                &b * b.transpose()
            })
            .collect();
        let labels: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let phi = vec![2.0 / n as f64; n];
        let eta = extract_weights(&mats, &labels, &phi).unwrap();
        prop_assert_eq!(eta.len(), p);
        prop_assert!(eta.as_slice().iter().all(|&w| w >= 0.0));
        prop_assert!((eta.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn packed_windows_conserve_shots_and_match_serial(
        n_circuits in 1usize..6,
        seed in any::<u64>(),
        shots in 1u64..400,
    ) {
        let s = spec(2, 2);
        let th = theta(&s, seed);
        let circuits: Vec<Circuit> = (0..n_circuits)
            .map(|c| {
                let v = c as f64 * 0.3;
                kernel_circuit(&s, &th, &[v, 1.0], &[1.0, v], 0.5)
            })
            .collect();
        let layout = pack(n_circuits, 2, &Device::Line(3 * n_circuits + 1), 1).unwrap();
        let packed = run_packed(&layout, &circuits, shots, seed, 0.0).unwrap();
        prop_assert_eq!(packed.counts.values().sum::<u64>(), shots);
        for a in &layout.assignments {
            let w = window_counts(&packed, &a.qubits).unwrap();
            prop_assert_eq!(w.counts.values().sum::<u64>(), shots);
            let serial = run_serial(&circuits[a.circuit], a.circuit, shots, seed).unwrap();
            for (k, &c) in &serial.counts {
                prop_assert_eq!(w.get(k), c);
            }
        }
        let full = partial_measurement(&packed, 0, packed.width).unwrap();
        for (k, &c) in &packed.counts {
            prop_assert_eq!(full.get(k), c);
        }
    }

    #[test]
    fn dataset_csv_round_trips(
        rows in prop::collection::vec((prop::collection::vec(-10.0f64..10.0, 6), any::<bool>()), 1..8),
    ) {
        let instances: Vec<TimeSeriesInstance> = rows
            .iter()
            .map(|(v, pos)| {
                let values = v.chunks(2).map(<[f64]>::to_vec).collect();
                TimeSeriesInstance::new(values, if *pos { 1 } else { -1 }).unwrap()
            })
            .collect();
        let ds = Dataset::new("prop", instances, vec![0.0, 0.5, 1.0]).unwrap();
        let back = Dataset::from_csv("prop", &ds.to_csv(), ds.times.clone(), 2).unwrap();
        prop_assert_eq!(back, ds);
    }
}
