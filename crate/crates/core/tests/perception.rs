mod common;

use common::naive_dft;
use ctm_core::perception::*;
use ctm_core::tensor::Matrix;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn frames(rng: &mut StdRng, cfg: &PerceptionConfig) -> Vec<ModalityFrame> {
    Modality::ALL
        .iter()
        .map(|&m| ModalityFrame { modality: m, values: (0..cfg.input_dim(m)).map(|_| rng.random_range(-1.0..1.0)).collect() })
        .collect()
}

#[test]
fn spectrum_matches_naive_dft_and_parseval() {
    let mut rng = StdRng::seed_from_u64(5);
    for _ in 0..20 {
        let x: Vec<f32> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let oracle = naive_dft(&x);
        let fast = full_magnitude_spectrum(&x);
        for (a, b) in fast.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        let energy: f64 = oracle.iter().map(|m| m * m).sum();
        let time: f64 = x.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
        assert!((energy - 256.0 * time).abs() <= 1e-6 * energy);
        let bins = spectrum(&x, 80).unwrap();
        for (a, b) in bins.iter().zip(&oracle) {
            assert!((f64::from(*a) - b).abs() <= 1e-6 * b.max(1.0));
        }
    }
}

#[test]
fn zero_weights_give_zero_latents() {
    let cfg = PerceptionConfig::default();
    let w = EncoderWeights::zeros(&cfg);
    let mut rng = StdRng::seed_from_u64(6);
    for frame in frames(&mut rng, &cfg) {
        assert!(encode_modality(&frame, &w).unwrap().latent.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn fusion_is_deterministic_and_order_free() {
    let cfg = PerceptionConfig::default();
    let mut rng = StdRng::seed_from_u64(7);
    let inputs = frames(&mut rng, &cfg);
    let run = || {
        let w = EncoderWeights::seeded(&cfg, 99);
        let l: Vec<ModalityLatent> = inputs.iter().map(|f| encode_modality(f, &w).unwrap()).collect();
        (fuse(&l[0], &l[1], &l[2], &w).unwrap(), l, w)
    };
    let (first, latents, w) = run();
    for _ in 0..100 {
        assert_eq!(run().0, first);
    }
    let reversed: Vec<ModalityLatent> = latents.iter().rev().cloned().collect();
    assert_eq!(fuse_unordered(&reversed, &w).unwrap(), first);
    assert_eq!(first.len(), 256);
    assert!(first.as_slice().iter().all(|v| v.abs() < 1.0));
}

#[test]
fn seeded_weights_follow_documented_stream() {
    // Entries are uniform in +-1/sqrt(cols) and reproduce byte for byte.
    let a = Matrix::seeded(128, 768, 3, "enc.vision");
    let b = Matrix::seeded(128, 768, 3, "enc.vision");
    assert_eq!(a, b);
    let bound = 1.0 / (768f32).sqrt();
    assert!(a.data().iter().all(|v| v.abs() <= bound));
    assert_ne!(a, Matrix::seeded(128, 768, 4, "enc.vision"));
    assert_eq!(EncoderWeights::seeded(&PerceptionConfig::default(), 3).vision, a);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn latents_stay_inside_open_interval(seed in any::<u64>(), scale in 0.01f32..1e4) {
        let cfg = PerceptionConfig::default();
        let w = EncoderWeights::seeded(&cfg, seed);
        let mut rng = StdRng::seed_from_u64(seed);
        let fs: Vec<ModalityFrame> = frames(&mut rng, &cfg)
            .into_iter()
            .map(|mut f| { f.values.iter_mut().for_each(|v| *v *= scale); f })
            .collect();
        let l: Vec<ModalityLatent> = fs.iter().map(|f| encode_modality(f, &w).unwrap()).collect();
        prop_assert!(l.iter().flat_map(|x| &x.latent).all(|v| v.abs() < 1.0));
        let f = fuse(&l[0], &l[1], &l[2], &w).unwrap();
        prop_assert!(f.as_slice().iter().all(|v| v.abs() < 1.0));
    }
}
