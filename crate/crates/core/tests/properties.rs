//! Randomized invariants over the core algorithms.

use proptest::prelude::*;

use rft_core::compensation::{enhance, SpliceKind, SpliceModel, Transforms};
use rft_core::frontend::{
    add_deltas_and_cms, dct_matrix, lifter_weights, FeatureKind, FeatureSequence,
};
use rft_core::gmm::{Covariances, GaussianMixture};
use rft_core::heq::{build_table, equalize};
use rft_core::nmf::{kl_divergence, update_h, update_w, Activations, Dictionary};
use rft_core::Mat;

fn cepstral_transform(x: &[f64]) -> Vec<f64> {
    let dct = dct_matrix(13, 23);
    let lift = lifter_weights(22, 13);
    let c = dct.mul_vec(x);
    c.iter().zip(&lift).map(|(v, l)| v * l).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dct_and_lifter_are_linear(
        a in proptest::collection::vec(-50.0f64..50.0, 23),
        b in proptest::collection::vec(-50.0f64..50.0, 23),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
        let lhs = cepstral_transform(&combo);
        let ta = cepstral_transform(&a);
        let tb = cepstral_transform(&b);
        for i in 0..13 {
            let rhs = alpha * ta[i] + beta * tb[i];
            prop_assert!((lhs[i] - rhs).abs() < 1e-10, "index {i}: {} vs {}", lhs[i], rhs);
        }
    }

    #[test]
    fn cms_output_has_zero_mean(
        rows in proptest::collection::vec(
            proptest::collection::vec(-20.0f64..20.0, 13),
            5..40,
        ),
    ) {
        let n = rows.len();
        let seq = FeatureSequence::new(Mat::from_rows(&rows), FeatureKind::Mfcc, 10.0);
        let out = add_deltas_and_cms(&seq, 2).unwrap();
        prop_assert_eq!(out.frames.cols(), 39);
        prop_assert_eq!(out.frames.rows(), n);
        for j in 0..39 {
            let mean: f64 = (0..n).map(|t| out.frames[(t, j)]).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-9, "dim {j} mean {mean}");
        }
    }

    #[test]
    fn nmf_updates_keep_nonnegativity_and_do_not_increase_divergence(
        vdata in proptest::collection::vec(0.01f64..10.0, 4 * 6),
        wdata in proptest::collection::vec(0.01f64..5.0, 4 * 2),
        hdata in proptest::collection::vec(0.01f64..5.0, 2 * 6),
    ) {
        let v = Mat::from_fn(4, 6, |i, j| vdata[i * 6 + j]);
        let w = Dictionary { basis: Mat::from_fn(4, 2, |i, j| wdata[i * 2 + j]), iterations_trained: 0 };
        let h = Activations { weights: Mat::from_fn(2, 6, |i, j| hdata[i * 6 + j]) };
        let before = kl_divergence(&v, &w, &h).unwrap();
        let h2 = update_h(&v, &w, &h);
        prop_assert!(h2.weights.data().iter().all(|&x| x >= 0.0 && x.is_finite()));
        let mid = kl_divergence(&v, &w, &h2).unwrap();
        prop_assert!(mid <= before + 1e-6, "H step: {before} -> {mid}");
        let w2 = update_w(&v, &w, &h2);
        prop_assert!(w2.basis.data().iter().all(|&x| x >= 0.0 && x.is_finite()));
        let after = kl_divergence(&v, &w2, &h2).unwrap();
        prop_assert!(after <= mid + 1e-6, "W step: {mid} -> {after}");
    }

    #[test]
    fn heq_map_is_monotone(
        test_samples in proptest::collection::vec(-100.0f64..100.0, 10..200),
        ref_samples in proptest::collection::vec(-100.0f64..100.0, 10..200),
        probes in proptest::collection::vec(-150.0f64..150.0, 2..20),
    ) {
        let test = build_table(&test_samples, 10).unwrap();
        let reference = build_table(&ref_samples, 10).unwrap();
        let mut pairs: Vec<(f64, f64)> =
            probes.iter().map(|&x| (x, equalize(x, &test, &reference))).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in pairs.windows(2) {
            prop_assert!(
                w[1].1 >= w[0].1 - 1e-9,
                "g({}) = {} > g({}) = {}",
                w[0].0, w[0].1, w[1].0, w[1].1
            );
        }
    }

    #[test]
    fn gmm_posteriors_form_a_simplex(
        means in proptest::collection::vec(
            proptest::collection::vec(-10.0f64..10.0, 3),
            2..6,
        ),
        y in proptest::collection::vec(-15.0f64..15.0, 3),
        raw_w in proptest::collection::vec(0.1f64..1.0, 6),
    ) {
        let m = means.len();
        let total: f64 = raw_w[..m].iter().sum();
        let weights: Vec<f64> = raw_w[..m].iter().map(|w| w / total).collect();
        let gmm = GaussianMixture::new(
            weights,
            Mat::from_rows(&means),
            Covariances::Diagonal(Mat::from_fn(m, 3, |_, _| 1.0)),
        )
        .unwrap();
        let p = gmm.posteriors(&y).unwrap();
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
        prop_assert!(p.iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));
    }

    #[test]
    fn single_mixture_enhancement_is_affine(
        adata in proptest::collection::vec(-2.0f64..2.0, 4),
        bias in proptest::collection::vec(-3.0f64..3.0, 2),
        y1 in proptest::collection::vec(-5.0f64..5.0, 2),
        y2 in proptest::collection::vec(-5.0f64..5.0, 2),
        t in 0.0f64..1.0,
    ) {
        let gmm = GaussianMixture::new(
            vec![1.0],
            Mat::zeros(1, 2),
            Covariances::Diagonal(Mat::from_fn(1, 2, |_, _| 1.0)),
        )
        .unwrap();
        let a = Mat::from_fn(2, 2, |i, j| adata[i * 2 + j]);
        let model = SpliceModel::new(
            SpliceKind::Splice,
            gmm,
            Transforms::Full(vec![a]),
            Mat::from_rows(&[bias.clone()]),
            Mat::zeros(1, 2),
        )
        .unwrap();
        let mix: Vec<f64> = y1.iter().zip(&y2).map(|(p, q)| t * p + (1.0 - t) * q).collect();
        let e_mix = enhance(&mix, &model).unwrap();
        let e1 = enhance(&y1, &model).unwrap();
        let e2 = enhance(&y2, &model).unwrap();
        for i in 0..2 {
            let rhs = t * e1[i] + (1.0 - t) * e2[i];
            prop_assert!((e_mix[i] - rhs).abs() < 1e-9);
        }
    }
}
