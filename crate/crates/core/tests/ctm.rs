mod common;

use common::gen::random_matrix;
use common::{close, dense_readout, plain_certainty, scan_sync};
use ctm_core::ctm::*;
use ctm_core::perception::FusionVector;
use ctm_core::tensor::Matrix;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[test]
fn low_rank_matches_dense_readout() {
    let mut rng = StdRng::seed_from_u64(1);
    for _ in 0..300 {
        let h = random_matrix(&mut rng, 64, 8, 1.0);
        let a = random_matrix(&mut rng, 8, 4, 0.7);
        let b = random_matrix(&mut rng, 64, 4, 0.7);
        let b0: Vec<f32> = (0..64).map(|_| rng.random_range(-0.5..0.5)).collect();
        let got = mu_mlp(&h, &a, &b, &b0).unwrap();
        let want = dense_readout(&h, &a, &b, &b0);
        for (g, w) in got.iter().zip(&want) {
            assert!(close(f64::from(*g), *w, 1e-5), "{g} vs {w}");
        }
    }
}

#[test]
fn closed_form_matches_scan() {
    let mut rng = StdRng::seed_from_u64(2);
    for _ in 0..300 {
        let l = rng.random_range(1..=32);
        let d = 16;
        let pairs: Vec<(usize, usize)> = (0..40).map(|_| (rng.random_range(0..d), rng.random_range(0..d))).collect();
        let sync: Vec<f32> = (0..40).map(|_| rng.random_range(-5.0..5.0)).collect();
        let states: Vec<Vec<f32>> = (0..l).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let got = sync_update(&sync, &states, &pairs, 0.999).unwrap();
        let want = scan_sync(&sync, &states, &pairs, 0.999);
        for (g, w) in got.iter().zip(&want) {
            assert!(close(f64::from(*g), *w, 1e-5));
        }
    }
}

#[test]
fn certainty_examples() {
    for t in [-3.0f32, 0.0, 0.5, 40.0] {
        assert!(certainty_from_logits(&[t; 4]).abs() < 1e-7);
    }
    assert!(certainty_from_logits(&[80.0, 0.0, 0.0, 0.0]) > 1.0 - 1e-8);
    let w = Matrix::from_rows(&[vec![10.0], vec![0.0], vec![0.0], vec![0.0]]).unwrap();
    let (h, c) = certainty(&[1.0], &w, 8.0).unwrap();
    assert_eq!(h, vec![80.0, 0.0, 0.0, 0.0]);
    assert!(c > 1.0 - 1e-8);
}

#[test]
fn certainty_agrees_with_plain_formula() {
    let mut rng = StdRng::seed_from_u64(3);
    for _ in 0..2000 {
        let x: Vec<f32> = (0..4).map(|_| rng.random_range(-6.0..6.0)).collect();
        let plain = plain_certainty(&x.iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
        assert!((certainty_from_logits(&x) - plain).abs() < 1e-12);
    }
}

#[test]
fn halting_examples() {
    let cfg = HaltConfig { cap: 0.995, plateau_span: 1e-3, plateau_window: 3 };
    assert_eq!(halt_decision(0.9, 0.75, &[0.9], 10, 3, &cfg), HaltDecision::Halt);
    assert_eq!(halt_decision(0.5, 0.75, &[0.3, 0.5], 10, 3, &cfg), HaltDecision::Continue);
    assert_eq!(halt_decision(0.99, 1.125, &[0.79, 0.99], 10, 3, &cfg), HaltDecision::Continue);
    assert_eq!(halt_decision(0.995, 1.125, &[0.7, 0.995], 10, 3, &cfg), HaltDecision::Halt);
    assert_eq!(halt_decision(0.2, 0.75, &[0.1, 0.5], 10, 0, &cfg), HaltDecision::Halt);
    assert_eq!(halt_decision(0.2, 0.75, &[0.2, 0.2005, 0.2], 10, 3, &cfg), HaltDecision::Halt);
}

#[test]
fn gated_carry_examples() {
    let zb = [0.5f32, -1.0, 0.25];
    let r = gated_carry(&[0.0; 3], &zb, 0.9).unwrap();
    for (x, b) in r.iter().zip(&zb) {
        assert!((f64::from(*x) - 0.1 * f64::from(*b)).abs() < 1e-7);
    }
    assert_eq!(gated_carry(&zb, &zb, 0.9).unwrap(), zb.to_vec());
    assert!(gated_carry(&[0.0; 2], &zb, 0.9).is_err());
}

#[test]
fn zero_weights_cascade_to_zero() {
    let config = CtmConfig::default();
    let params = CtmParams { weights: CtmWeights::zeros(&config, 256, 1), config };
    let ctx = SlabContext::canonical(&params, 0.75);
    let (state, r) = run_slab(BranchState::new(&params.config), &FusionVector::new(vec![0.3; 256]), &params, &ctx).unwrap();
    assert_eq!(r.sync, vec![0.0; 256]);
    assert_eq!(r.logits, vec![0.0; 4]);
    assert_eq!(r.certainty, 0.0);
    assert_eq!(r.ticks_used, 8);
    assert_eq!(state.tick, 8);
}

fn seeded_params(seed: u64) -> CtmParams {
    let config = CtmConfig::default();
    CtmParams { weights: CtmWeights::seeded(&config, 256, seed), config }
}

#[test]
fn slab_is_deterministic_and_budgeted() {
    let params = seeded_params(9);
    let f = FusionVector::new((0..256).map(|i| ((i * 7 % 13) as f32 - 6.0) / 7.0).collect());
    let ctx = SlabContext::canonical(&params, 0.75);
    let a = run_branch(BranchState::new(&params.config), &f, &params, &ctx).unwrap();
    let b = run_branch(BranchState::new(&params.config), &f, &params, &ctx).unwrap();
    assert_eq!(a, b);
    assert!(a.0.tick <= params.config.tick_budget());
    assert!(a.0.z.iter().all(|z| z.abs() < 1.0));

    let mut spent = BranchState::new(&params.config);
    spent.slab = params.config.max_slabs;
    assert!(matches!(run_slab(spent, &f, &params, &ctx), Err(CtmError::BudgetExhausted { .. })));
}

#[test]
fn synapse_paths_agree() {
    // The slab loop caches the context half of the product; the public
    // synapse must produce the same bits.
    let params = seeded_params(4);
    let w = &params.weights.synapse;
    let z: Vec<f32> = (0..64).map(|i| (i as f32 * 0.1).sin()).collect();
    let f: Vec<f32> = (0..256).map(|i| (i as f32 * 0.03).cos()).collect();
    let full: Vec<f64> = w.matvec(&[z.clone(), f.clone()].concat());
    let direct = synapse(&z, &f, w).unwrap();
    for (d, s) in direct.iter().zip(&full) {
        assert!((f64::from(*d) - s.tanh()).abs() < 1e-6);
    }
}

#[test]
fn pairs_are_distinct_and_in_range() {
    let pairs = sample_pairs(64, 256, 77);
    assert_eq!(pairs.len(), 256);
    let mut seen = std::collections::HashSet::new();
    assert!(pairs.iter().all(|&(p, q)| p < 64 && q < 64 && seen.insert((p, q))));
    assert_eq!(pairs, sample_pairs(64, 256, 77));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn certainty_in_unit_interval(x in prop::collection::vec(-1e4f32..1e4, 2..9)) {
        let c = certainty_from_logits(&x);
        prop_assert!((0.0..=1.0).contains(&c));
    }

    #[test]
    fn hidden_state_stays_bounded(seed in any::<u64>(), scale in 0.1f32..50.0) {
        let params = seeded_params(seed);
        let f = FusionVector::new((0..256).map(|i| ((i as f32) * 0.37).sin() * scale).collect());
        let ctx = SlabContext::canonical(&params, 0.75);
        let (state, r) = run_slab(BranchState::new(&params.config), &f, &params, &ctx).unwrap();
        prop_assert!(state.z.iter().all(|z| z.abs() < 1.0));
        prop_assert!(state.history.data().iter().all(|z| z.abs() < 1.0));
        prop_assert!((0.0..=1.0).contains(&r.certainty));
    }

    #[test]
    fn carry_is_convex(a in prop::collection::vec(-1f32..1.0, 8), b in prop::collection::vec(-1f32..1.0, 8), beta in 0.0f64..=1.0) {
        let r = gated_carry(&a, &b, beta).unwrap();
        let bound = a.iter().chain(&b).fold(0f32, |m, v| m.max(v.abs()));
        prop_assert!(r.iter().all(|v| v.abs() <= bound));
    }
}
