use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unida::memory::{loss_nil, MemoryBank, NeighborMode};
use unida::model::NetworkParams;
use unida::nn::{finite_diff_grad, max_relative_error, Activation};
use unida::objectives::{loss_total, loss_total_value, Batch, MixPlan, MixupMode, NilInputs, ObjectiveConfig};

fn mode_from(i: u8) -> NeighborMode {
    if i % 2 == 0 {
        NeighborMode::Knn { k: 3 }
    } else {
        NeighborMode::Adaptive { epsilon: 0.5 }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn objective_gradient_matches_finite_differences(
        seed in 0u64..10_000,
        mode in 0u8..2,
        mix in 0u8..3,
        confidence in any::<bool>(),
        softplus in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(2..5);
        let act = if softplus { Activation::Softplus } else { Activation::Tanh };
        let params = NetworkParams::new(&[3, 5, 4], k, act, seed).unwrap();
        let n = rng.gen_range(2..5);
        let xs = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.5..1.5));
        let xt = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.5..1.5));
        let ys: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let idx: Vec<usize> = (0..n).map(|i| 2 * i).collect();
        let mut bank = MemoryBank::new(10, 4, 10.0, mode_from(mode)).unwrap();
        let other = Array2::from_shape_fn((10, 4), |_| rng.gen_range(-1.0..1.0));
        bank.update(&(0..10).collect::<Vec<_>>(), other.view()).unwrap();
        bank.update(&idx, params.extract_features(xt.view()).unwrap().view()).unwrap();
        let sets = bank.neighbor_sets(&idx, confidence).unwrap();
        let nil = NilInputs { bank: &bank, sets: &sets };
        let mixup = [MixupMode::Cross, MixupMode::Source, MixupMode::Off][mix as usize];
        let cfg = ObjectiveConfig { mixup, cc_stop_gradient: false, ..ObjectiveConfig::default() };
        let plan = MixPlan::draw(&mut rng, mixup, &ys, n, 2.0).unwrap();
        let batch = Batch { source_x: xs.view(), source_y: &ys, target_x: xt.view(), target_idx: &idx };

        let (_, analytic) = loss_total(&params, &batch, &cfg, &plan, Some(nil), 2).unwrap();
        let numeric = finite_diff_grad(
            |p: &NetworkParams| Ok(loss_total_value(p, &batch, &cfg, &plan, Some(nil), 2)?.total),
            &params,
            1e-5,
        )
        .unwrap();
        let err = max_relative_error(&analytic, &numeric, 1e-6);
        prop_assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn nil_gradient_is_tangent_to_the_sphere(seed in 0u64..10_000, scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bank = MemoryBank::new(8, 3, 10.0, NeighborMode::Knn { k: 2 }).unwrap();
        let rows = Array2::from_shape_fn((8, 3), |_| rng.gen_range(-1.0..1.0));
        bank.update(&(0..8).collect::<Vec<_>>(), rows.view()).unwrap();
        let set = &bank.neighbor_sets(&[0], false).unwrap()[0];
        let z = rows.row(0).mapv(|v| v * scale);
        let (_, g) = loss_nil(&bank, set, z.view()).unwrap();
        // the loss only sees z / |z|, so its gradient has no radial part
        prop_assert!(g.dot(&z).abs() < 1e-9 * (1.0 + g.dot(&g).sqrt() * scale));
    }
}
