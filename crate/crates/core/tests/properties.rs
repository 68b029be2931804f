use flowlab::checkpoint::{decode, encode_adapter, encode_teacher, SaveInfo};
use flowlab::lora::{effective_weights, LoraAdapter, LoraInit, LoraSpec};
use flowlab::metrics::{endpoint_mse, energy_distance, sliced_w2};
use flowlab::model::{Architecture, VelocityField};
use flowlab::rng::{normal_tensor, stream, Purpose};
use flowlab::sampling::generate;
use flowlab::schedule::{allocate, allocate_uniform, full_schedule, partition, snr, PartitionMode, TimeGrid};
use flowlab::Tensor;
use proptest::prelude::*;

fn small_model(seed: u64) -> VelocityField {
    let arch = Architecture {
        hidden: vec![10, 6],
        time_embed_dim: 4,
        ..Architecture::default()
    };
    VelocityField::init(arch, &mut stream(seed, Purpose::Init, 0)).unwrap()
}

fn cloud(seed: u64, n: usize) -> Tensor {
    normal_tensor(&mut stream(seed, Purpose::EvalNoise, 3), n, 2, 1.0)
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut stream(seed, Purpose::Shuffle, 5));
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn zero_b_adapter_is_identity(seed in any::<u64>(), rank in 1usize..12, tau in 0.0f64..=1.0) {
        let base = small_model(seed);
        let spec = LoraSpec { rank, ..LoraSpec::default() };
        let adapter = LoraAdapter::init(&base, &spec, &mut stream(seed, Purpose::Init, 1)).unwrap();
        let x = cloud(seed, 7);
        let bare = base.forward(&x, tau, None).unwrap();
        let adapted = effective_weights(&base, &adapter).unwrap().forward(&x, tau, None).unwrap();
        prop_assert!(bare.bit_eq(&adapted));
    }

    #[test]
    fn doubling_b_doubles_delta(seed in any::<u64>(), rank in 1usize..6) {
        let base = small_model(seed);
        let spec = LoraSpec { rank, init: LoraInit::GaussianBoth, ..LoraSpec::default() };
        let a = LoraAdapter::init(&base, &spec, &mut stream(seed, Purpose::Init, 1)).unwrap();
        let mut doubled = a.clone();
        for l in doubled.layers_mut() {
            l.b = l.b.scale(2.0);
        }
        for i in 0..a.layers().len() {
            prop_assert!(doubled.delta(i).unwrap().bit_eq(&a.delta(i).unwrap().scale(2.0)));
        }
    }

    #[test]
    fn allocation_orders_phases(n in 4usize..120, rho in 0.05f64..0.95, ks in 1usize..40, kf in 1usize..40) {
        let grid = TimeGrid::uniform(n).unwrap();
        let Ok(part) = partition(&grid, PartitionMode::IndexFraction(rho)) else { return Ok(()); };
        if let Ok(s) = allocate(&grid, &part, ks, kf) {
            let exec = s.executed();
            prop_assert_eq!(exec.len(), ks + kf);
            prop_assert!(exec.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(s.slow.iter().all(|&i| i < part.boundary_index));
            prop_assert!(s.fast.iter().all(|&i| i >= part.boundary_index));
            prop_assert!(s.slow.last() < s.fast.first());
            // the fast count never moves slow steps
            if let Ok(other) = allocate(&grid, &part, ks, 1) {
                prop_assert_eq!(&other.slow, &s.slow);
            }
        }
        if let Ok(u) = allocate_uniform(&grid, &part, ks) {
            prop_assert_eq!(u.nfe(), ks);
        }
        let full = full_schedule(&grid, &part).unwrap();
        prop_assert_eq!(full.executed(), (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn snr_is_increasing(a in 0.001f64..0.999, b in 0.001f64..0.999) {
        prop_assume!(a < b);
        prop_assert!(snr(a).unwrap() < snr(b).unwrap());
    }

    #[test]
    fn metrics_ignore_sample_order(seed in any::<u64>(), n in 2usize..40, m in 2usize..40) {
        let x = cloud(seed, n);
        let y = cloud(seed ^ 1, m).map(|v| v + 0.3);
        let xp = x.gather_rows(&permutation(n, seed)).unwrap();
        let yp = y.gather_rows(&permutation(m, seed ^ 2)).unwrap();
        let ed = energy_distance(&x, &y).unwrap();
        prop_assert!(ed >= 0.0);
        prop_assert!((ed - energy_distance(&xp, &yp).unwrap()).abs() < 1e-12);
        prop_assert!((ed - energy_distance(&y, &x).unwrap()).abs() < 1e-12);
        let sw = sliced_w2(&x, &y, 8, seed).unwrap();
        prop_assert!((sw - sliced_w2(&xp, &yp, 8, seed).unwrap()).abs() < 1e-12);
        prop_assert!(sw >= 0.0);
        prop_assert_eq!(endpoint_mse(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_supports_have_positive_distance(seed in any::<u64>(), gap in 0.01f64..5.0) {
        let x = cloud(seed, 20).map(|v| v.abs());
        let y = x.map(|v| -v - gap);
        prop_assert!(energy_distance(&x, &y).unwrap() > 0.0);
        prop_assert!(sliced_w2(&x, &y, 4, seed).unwrap() > 0.0);
    }

    #[test]
    fn sampling_is_batch_equivariant(seed in any::<u64>(), n in 1usize..12) {
        let base = small_model(seed);
        let grid = TimeGrid::uniform(20).unwrap();
        let part = partition(&grid, PartitionMode::default()).unwrap();
        let sched = allocate(&grid, &part, 3, 5).unwrap();
        let noise = cloud(seed, n);
        let all = generate(&base, None, &sched, &grid, &noise, None).unwrap();
        let perm = permutation(n, seed);
        let shuffled = generate(&base, None, &sched, &grid, &noise.gather_rows(&perm).unwrap(), None).unwrap();
        prop_assert!(shuffled.terminal().bit_eq(&all.terminal().gather_rows(&perm).unwrap()));
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), rank in 1usize..9) {
        let base = small_model(seed);
        let info = SaveInfo { seed, ..SaveInfo::default() };
        prop_assert!(decode(&encode_teacher(&base, &info).unwrap()).unwrap().into_teacher().unwrap().bit_eq(&base));
        let spec = LoraSpec { rank, init: LoraInit::GaussianBoth, ..LoraSpec::default() };
        let a = LoraAdapter::init(&base, &spec, &mut stream(seed, Purpose::Init, 1)).unwrap();
        prop_assert!(decode(&encode_adapter(&a, &info).unwrap()).unwrap().into_adapter().unwrap().bit_eq(&a));
    }
}
