mod common;

use common::{gradient_probe, l1_instance, linear_probe_setup, tiny_network_probe_setup};
use grille_core::generator::{linear_oracle_generator, DiscriminatorModel, LatentVector};
use grille_core::grille_key::{derive_grille, Mask};
use grille_core::image::{ImageBuffer, Provenance};
use grille_core::keyed::{seeded_rng, Secret};
use grille_core::latent_search::{
    contextual_loss, find_z, find_z_observed, loss_and_gradient, message_loss, perceptual_loss,
    SearchConfig,
};
use grille_core::message_codec::{expand_message, extract, MessageBits};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn linear_generator_gradients_match_differences() {
    let mut rng = seeded_rng(100);
    for probe in 0..100 {
        let setup = linear_probe_setup(probe);
        let err = gradient_probe(&setup, &mut rng);
        assert!(err <= 1e-4, "probe {probe}: relative error {err}");
    }
}

#[test]
fn tiny_network_gradients_match_differences() {
    let mut rng = seeded_rng(200);
    for probe in 0..100 {
        let setup = tiny_network_probe_setup(probe);
        let err = gradient_probe(&setup, &mut rng);
        assert!(err <= 1e-4, "probe {probe}: relative error {err}");
    }
}

fn l1_config() -> SearchConfig {
    SearchConfig {
        lambda_perceptual: 0.0,
        iterations: 5000,
        learning_rate: 0.003,
        ..SearchConfig::default()
    }
}

#[test]
fn search_reaches_normal_equations_optimum() {
    for seed in 0..20 {
        let (g, target, optimum) = l1_instance(seed);
        let (w, h, _) = g.output_shape();
        let mask = Mask::all_known(w, h).unwrap();
        let key = derive_grille(&Secret::from_u64(seed), &mask, 1.0, 8, 0).unwrap();
        let d = DiscriminatorModel::constant(0.5, w, h, 1).unwrap();
        let r = find_z(
            &g,
            &d,
            &target,
            &mask,
            &key,
            &l1_config(),
            &mut seeded_rng(seed),
        )
        .unwrap();
        let found = contextual_loss(&g.forward(&r.z).unwrap(), &target, &mask).unwrap();
        assert!(
            found <= optimum + 1e-3,
            "instance {seed}: {found} vs {optimum}"
        );
    }
}

#[test]
fn best_so_far_never_increases_and_iterates_stay_in_box() {
    let setup = tiny_network_probe_setup(9);
    let cfg = SearchConfig {
        iterations: 200,
        learning_rate: 0.2,
        ..setup.cfg
    };
    let mut last = f64::INFINITY;
    let mut seen = 0;
    let r = find_z_observed(
        &setup.g,
        &setup.d,
        &setup.cover,
        &setup.mask,
        &setup.key,
        &cfg,
        &mut seeded_rng(1),
        &mut |_, z: &LatentVector, loss| {
            assert!(z.values().iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(loss.total <= last);
            last = loss.total;
            seen += 1;
        },
    )
    .unwrap();
    assert_eq!(seen, 201);
    assert_eq!(r.trace.len(), 201);
    assert_eq!(r.best, r.trace[r.best_iteration]);
    assert!(r.trace.iter().all(|l| l.total >= r.best.total));
}

#[test]
fn search_is_deterministic_given_seed() {
    let setup = linear_probe_setup(4);
    let cfg = SearchConfig {
        iterations: 50,
        ..setup.cfg
    };
    let run = |s| {
        find_z(
            &setup.g,
            &setup.d,
            &setup.cover,
            &setup.mask,
            &setup.key,
            &cfg,
            &mut seeded_rng(s),
        )
        .unwrap()
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3).z, run(4).z);
}

#[test]
fn loss_terms_match_definitions() {
    let setup = tiny_network_probe_setup(17);
    let z = LatentVector::uniform(setup.g.latent_dim(), &mut seeded_rng(5));
    let (loss, _) = loss_and_gradient(
        &setup.g,
        &setup.d,
        &setup.cover,
        &setup.mask,
        &setup.key,
        &setup.cfg,
        &z,
    )
    .unwrap();
    let img = setup.g.forward(&z).unwrap();
    assert_eq!(
        loss.contextual,
        contextual_loss(&img, &setup.cover, &setup.mask).unwrap()
    );
    assert_eq!(
        loss.message,
        message_loss(&img, &setup.cover, &setup.key).unwrap()
    );
    assert_eq!(loss.perceptual, perceptual_loss(&setup.d, &img).unwrap());
    let expected = loss.contextual
        + setup.cfg.message_weight * loss.message
        + setup.cfg.lambda_perceptual * loss.perceptual;
    assert!((loss.total - expected).abs() <= 1e-12 * expected.abs());
    let brute: f64 = img
        .values()
        .iter()
        .zip(setup.cover.values())
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!((loss.contextual - brute).abs() <= 1e-12);
}

#[test]
fn perceptual_examples() {
    let img = ImageBuffer::filled(3, 3, 1, 0.0);
    let half = DiscriminatorModel::constant(0.5, 3, 3, 1).unwrap();
    assert!((perceptual_loss(&half, &img).unwrap() - 0.5f64.ln()).abs() < 1e-12);
    let confident = DiscriminatorModel::constant(0.9, 3, 3, 1).unwrap();
    assert!((perceptual_loss(&confident, &img).unwrap() - 0.1f64.ln()).abs() < 1e-9);
    assert!(DiscriminatorModel::constant(1.0, 3, 3, 1).is_err());
}

#[test]
fn contextual_ignores_missing_pixels() {
    let a = ImageBuffer::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4], Provenance::Generated).unwrap();
    let b = ImageBuffer::new(2, 2, 1, vec![0.0, 0.0, 0.0, 0.0], Provenance::ExpandedCover).unwrap();
    let none = Mask::new(2, 2, vec![false; 4]).unwrap();
    assert_eq!(contextual_loss(&a, &b, &none).unwrap(), 0.0);
    let some = Mask::new(2, 2, vec![true, false, false, true]).unwrap();
    assert!((contextual_loss(&a, &b, &some).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn shape_mismatch_is_rejected() {
    let a = ImageBuffer::filled(2, 2, 1, 0.0);
    let b = ImageBuffer::filled(3, 2, 1, 0.0);
    assert!(contextual_loss(&a, &b, &Mask::all_known(2, 2).unwrap()).is_err());
}

#[test]
fn zero_message_loss_means_zero_ber() {
    let mut rng = seeded_rng(31);
    let (w, h, dim) = (5, 5, 25);
    let mask = Mask::all_known(w, h).unwrap();
    let key = derive_grille(&Secret::from_u64(2), &mask, 0.4, 5, 0).unwrap();
    let cover = ImageBuffer::new(
        w,
        h,
        1,
        (0..25).map(|_| rng.random_range(-0.8..0.8)).collect(),
        Provenance::Dataset,
    )
    .unwrap()
    .snapped();
    let msg = MessageBits::random(key.capacity(), &mut rng);
    let expanded = expand_message(&cover, &mask, &key, &msg).unwrap();
    // A = 0.5 I, b = t - 0.5 z*, so G(z*) = t.
    let z_star: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect();
    let a = DMatrix::from_diagonal_element(dim, dim, 0.5);
    let b: Vec<f64> = expanded
        .values()
        .iter()
        .zip(&z_star)
        .map(|(t, z)| t - 0.5 * z)
        .collect();
    let g = linear_oracle_generator(&a, &b, w, h, 1).unwrap();
    let img = g.forward(&LatentVector::new(z_star).unwrap()).unwrap();
    assert!(message_loss(&img, &expanded, &key).unwrap() < 1e-12);
    assert_eq!(extract(&img.snapped(), &key).unwrap(), msg);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn total_is_weighted_sum(seed in any::<u64>(), lambda in 0.0..2.0f64, weight in 0.0..50.0f64) {
        let mut setup = linear_probe_setup(seed);
        setup.cfg.lambda_perceptual = lambda;
        setup.cfg.message_weight = weight;
        let z = LatentVector::uniform(setup.g.latent_dim(), &mut seeded_rng(seed ^ 1));
        let (l, _) = loss_and_gradient(&setup.g, &setup.d, &setup.cover, &setup.mask, &setup.key, &setup.cfg, &z).unwrap();
        let expected = l.contextual + weight * l.message + lambda * l.perceptual;
        prop_assert!((l.total - expected).abs() <= 1e-12 * expected.abs().max(1e-300));
    }
}
