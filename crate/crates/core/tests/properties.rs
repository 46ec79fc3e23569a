//! Property tests for the weighting, smoothing and uncertainty invariants.

use ndarray::Array2;
use proptest::prelude::*;
use ubr2s::neuralcore::{softmax_rows, Model, ModelSpec};
use ubr2s::pseudolabel::build_state;
use ubr2s::reweighting::{batch_weights, decision_error, gaussian_cdf, sample_likelihood};
use ubr2s::seed::seeded_rng;
use ubr2s::uncertainty::extract_uncertainty;

proptest! {
    #[test]
    fn cdf_symmetry(mu in -5.0..5.0f64, sigma in 1e-3..3.0f64, d in 0.0..10.0f64) {
        let lo = gaussian_cdf(mu - d, mu, sigma).unwrap();
        let hi = gaussian_cdf(mu + d, mu, sigma).unwrap();
        prop_assert!((lo + hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cdf_monotone(mu in -2.0..2.0f64, sigma in 1e-2..2.0f64, a in -5.0..5.0f64, gap in 0.0..3.0f64) {
        let x = gaussian_cdf(a, mu, sigma).unwrap();
        let y = gaussian_cdf(a + gap, mu, sigma).unwrap();
        prop_assert!((0.0..=1.0).contains(&x) && x <= y);
    }

    #[test]
    fn weights_stay_in_unit_interval(
        score in -1.0..2.0f64,
        mean in prop::collection::vec(0.0..1.0f64, 2..6),
        sigma in 0.0..0.5f64,
    ) {
        let std = vec![sigma; mean.len()];
        let sl = sample_likelihood(score, mean[0], sigma);
        let de = decision_error(score, &mean, &std, 0).unwrap();
        prop_assert!((0.0..=1.0).contains(&sl));
        prop_assert!((0.0..=1.0).contains(&de));
    }

    #[test]
    fn decision_error_ignores_competitor_order(
        score in 0.0..1.0f64,
        rows in prop::collection::vec((0.0..1.0f64, 0.01..0.3f64), 3..7),
        shift in 1usize..6,
    ) {
        let (mean, std): (Vec<f64>, Vec<f64>) = rows.iter().copied().unzip();
        let k = mean.len();
        let mut order: Vec<usize> = (1..k).collect();
        order.rotate_left(shift % (k - 1));
        let permuted_mean: Vec<f64> = std::iter::once(mean[0]).chain(order.iter().map(|&i| mean[i])).collect();
        let permuted_std: Vec<f64> = std::iter::once(std[0]).chain(order.iter().map(|&i| std[i])).collect();
        let a = decision_error(score, &mean, &std, 0).unwrap();
        let b = decision_error(score, &permuted_mean, &permuted_std, 0).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn omega_is_scale_invariant(products in prop::collection::vec(1e-3..1.0f64, 1..50), k in 0.1..10.0f64) {
        let a = batch_weights(&products).unwrap();
        let scaled: Vec<f64> = products.iter().map(|p| p * k).collect();
        let b = batch_weights(&scaled).unwrap();
        let mean = a.omega.iter().sum::<f64>() / a.omega.len() as f64;
        prop_assert!((mean - 1.0).abs() < 1e-9);
        for (x, y) in a.omega.iter().zip(&b.omega) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(values in prop::collection::vec(-50.0..50.0f64, 12)) {
        let logits = Array2::from_shape_vec((3, 4), values).unwrap();
        let p = softmax_rows(&logits);
        for row in p.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mcd_table_invariants(seed in any::<u64>(), rows in 1usize..20) {
        let spec = ModelSpec { classes: 3, ..ModelSpec::default() };
        let model = Model::new(&spec, &mut seeded_rng(seed)).unwrap();
        let inputs = Array2::from_shape_fn((rows, 2), |(i, j)| (i as f64 * 0.3 - j as f64).sin());
        let table = extract_uncertainty(&model, inputs.view(), 5, 0.75, seed).unwrap();
        for row in table.mean.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-6);
        }
        prop_assert!(table.std.iter().all(|&s| s >= 0.0));
        let again = extract_uncertainty(&model, inputs.view(), 5, 0.75, seed).unwrap();
        prop_assert_eq!(&table, &again);
        let state = build_state(&table, seed, 0).unwrap();
        for row in state.p_tilde.rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }
}
