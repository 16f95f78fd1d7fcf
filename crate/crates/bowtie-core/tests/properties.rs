//! Invariants of the building blocks over randomly generated inputs.

use bowtie_core::cavi::sweep;
use bowtie_core::distributions::{gig_moments, pg_mean, GigParams};
use bowtie_core::ensemble::{ensemble_weights, mixture};
use bowtie_core::init::initialize;
use bowtie_core::linalg::{Cholesky, Mat};
use bowtie_core::sparsify::{fdr_estimate, select_from_scores, weight_score};
use bowtie_core::svi::{learning_rate, sample_batch, svi_step};
use bowtie_core::{Dataset, InitScheme, NetworkConfig, PredictiveSummary, SviOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn problem(seed: u64, n: usize, dims: &[usize]) -> (NetworkConfig, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Mat::from_fn(n, dims[0], |_, _| rng.random_range(-2.0..2.0));
    let y = Mat::from_fn(n, 1, |i, _| 2.0 * x[(i, 0)].sin() + 0.2 * rng.random_range(-1.0..1.0));
    let mut config = NetworkConfig::new(dims[0], &dims[1..dims.len() - 1], 1);
    config.seed = seed;
    (config, Dataset::new(x, y).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gig_moments_satisfy_jensen(nu in -6.0..6.0f64, delta in 0.05..8.0f64, lam in 0.05..8.0f64) {
        let m = gig_moments(&GigParams { nu, delta, lam }).unwrap();
        prop_assert!(m.mean > 0.0 && m.inv_mean > 0.0);
        prop_assert!(m.mean * m.inv_mean >= 1.0 - 1e-12);
    }

    #[test]
    fn pg_mean_is_even_and_decreasing(b in 0.1..5.0f64, c in 0.0..50.0f64, dc in 0.01..5.0f64) {
        let v = pg_mean(b, c).unwrap();
        prop_assert_eq!(v, pg_mean(b, -c).unwrap());
        prop_assert!(pg_mean(b, c + dc).unwrap() < v);
        prop_assert!(v <= b / 4.0 + 1e-15);
    }

    #[test]
    fn learning_rate_is_a_decreasing_step(k in 0.5001..1.0f64, t in 0usize..100_000) {
        let l = learning_rate(t, k);
        prop_assert!(l > 0.0 && l <= 1.0);
        prop_assert!(learning_rate(t + 1, k) < l);
    }

    #[test]
    fn ensemble_weights_are_shift_invariant(
        elbos in prop::collection::vec(-1e4..0.0f64, 1..8),
        shift in -1e5..1e5f64,
        zeta in 0.001..2.0f64,
    ) {
        let w = ensemble_weights(&elbos, zeta).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = elbos.iter().map(|e| e + shift).collect();
        for (a, b) in w.iter().zip(ensemble_weights(&shifted, zeta).unwrap()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let best = elbos.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        prop_assert!(w.iter().all(|&v| v <= w[best]));
    }

    #[test]
    fn mixture_variance_dominates_within_variance(
        parts in prop::collection::vec((-10.0..10.0f64, 0.01..5.0f64, 0.0..1.0f64), 1..6),
    ) {
        let total: f64 = parts.iter().map(|p| p.2 + 1e-3).sum();
        let weights: Vec<f64> = parts.iter().map(|p| (p.2 + 1e-3) / total).collect();
        let members: Vec<PredictiveSummary> = parts
            .iter()
            .map(|&(m, v, _)| PredictiveSummary { mean: vec![m], variance: vec![v], signal_variance: vec![0.0], samples: None })
            .collect();
        let mix = mixture(&members, &weights).unwrap();
        let within: f64 = parts.iter().zip(&weights).map(|(p, w)| w * p.1).sum();
        prop_assert!(mix.variance[0] >= within - 1e-12);
    }

    #[test]
    fn weight_score_is_sign_and_scale_invariant(m in -20.0..20.0f64, var in 1e-4..50.0f64, c in 0.01..100.0f64) {
        let q = weight_score(m, var).unwrap();
        prop_assert!((0.5..=1.0).contains(&q));
        prop_assert_eq!(q, weight_score(-m, var).unwrap());
        prop_assert!((q - weight_score(c * m, c * c * var).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fdr_is_a_rate(scores in prop::collection::vec(0.5..1.0f64, 0..40), kappa in 0.4..1.0f64) {
        let f = fdr_estimate(&scores, kappa);
        prop_assert!((0.0..=0.5).contains(&f));
    }

    #[test]
    fn selection_threshold_is_at_least_one_half(
        scores in prop::collection::vec(0.5..1.0f64, 6),
        alpha in 0.001..0.6f64,
    ) {
        let mask = select_from_scores(&[2, 2, 1], vec![scores[..4].to_vec(), scores[4..].to_vec()], alpha).unwrap();
        prop_assert!(mask.kappa_hat >= 0.5 && mask.kappa_hat <= 1.0);
    }

    #[test]
    fn packed_covariance_round_trips(n in 1usize..7, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let mut s = a.tmatmul(&a);
        s.add_diag(0.1);
        s.symmetrize();
        prop_assert_eq!(Mat::from_packed_lower(n, &s.to_packed_lower()).unwrap(), s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn svi_steps_keep_covariances_positive_definite(seed in 0u64..10_000, step in 0.01..1.0f64, size in 1usize..20) {
        let (config, data) = problem(seed, 20, &[2, 3, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut g, _) = initialize(&config, &data, InitScheme::Laplace, &mut rng).unwrap();
        let batch = sample_batch(data.len(), size, &mut rng);
        svi_step(&mut g, &data, &batch, step, None, &SviOptions::default()).unwrap();
        for layer in &g.layers {
            for row in &layer.rows {
                prop_assert!(Cholesky::new(&row.b).is_some());
            }
            prop_assert!(layer.noise.iter().all(|n| n.beta > 0.0 && n.alpha > 0.0));
        }
    }
}

#[test]
fn zero_step_leaves_noise_and_weights_unchanged() {
    let (config, data) = problem(3, 25, &[2, 3, 2, 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut g, mut local) = initialize(&config, &data, InitScheme::Laplace, &mut rng).unwrap();
    sweep(&mut g, &data, &mut local, true).unwrap();
    let before = g.clone();
    svi_step(&mut g, &data, &[1, 4, 7, 9], 0.0, None, &SviOptions::default()).unwrap();
    for (a, b) in g.layers.iter().zip(&before.layers) {
        assert_eq!(a.noise, b.noise);
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert!(ra.b.max_abs_diff(&rb.b) < 1e-10);
            assert!(ra.m.iter().zip(&rb.m).all(|(x, y)| (x - y).abs() < 1e-10));
        }
    }
}
