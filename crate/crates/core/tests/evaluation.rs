mod common;

use common::*;
use ndarray::{Array1, Array2};
use pace_core::evaluate::{gradient, loss, roc_auc, stratified_folds, train_logreg, LogRegOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn roc_auc_equals_pair_counting_for_every_small_label_pattern() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for n in 2..=12usize {
        for pattern in 1..(1u32 << n) - 1 {
            let labels: Vec<bool> = (0..n).map(|i| pattern >> i & 1 == 1).collect();
            // Few distinct values so ties are common.
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64 * 0.25).collect();
            assert_eq!(roc_auc(&scores, &labels).unwrap(), pair_count_auc(&scores, &labels), "{scores:?} {labels:?}");
            let continuous: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            assert_eq!(roc_auc(&continuous, &labels).unwrap(), pair_count_auc(&continuous, &labels));
        }
    }
}

#[test]
fn logistic_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..50 {
        let n = rng.random_range(5..40);
        let p = rng.random_range(1..6);
        let l2 = [0.0, 0.1, 1.0][case % 3];
        let x = Array2::from_shape_fn((n, p), |_| rng.random_range(-2.0..2.0));
        let mut y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        y[0] = true;
        y[1] = false;
        let w: Array1<f64> = (0..p).map(|_| rng.random_range(-1.5..1.5)).collect();
        let b = rng.random_range(-1.0..1.0);

        let (gw, gb) = gradient(x.view(), &y, w.view(), b, l2);
        let mut params = w.to_vec();
        params.push(b);
        let f = |v: &[f64]| loss(x.view(), &y, Array1::from(v[..p].to_vec()).view(), v[p], l2);
        let fd = central_difference(f, &params, 1e-5);
        let mut analytic = gw.to_vec();
        analytic.push(gb);
        let diff: f64 = analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        assert!(diff / scale <= 1e-5, "case {case}: relative error {}", diff / scale);
    }
}

#[test]
fn random_labels_score_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let x = Array2::from_shape_fn((3000, 8), |_| rng.random_range(-1.0..1.0));
    let y: Vec<bool> = (0..3000).map(|_| rng.random_bool(0.4)).collect();
    let fit = train_logreg(x.slice(ndarray::s![..2000, ..]), &y[..2000], 1.0, &LogRegOptions::default()).unwrap();
    let scores = fit.model.decision(x.slice(ndarray::s![2000.., ..]));
    let auc = roc_auc(scores.as_slice().unwrap(), &y[2000..]).unwrap();
    assert!((auc - 0.5).abs() <= 0.1, "auc {auc}");
}

#[test]
fn logistic_loss_trace_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..20 {
        let x = Array2::from_shape_fn((80, 4), |_| rng.random_range(-3.0..3.0));
        let y: Vec<bool> = (0..80).map(|i| x[[i, 0]] + rng.random_range(-1.0..1.0) > 0.0).collect();
        let fit = train_logreg(x.view(), &y, 0.01, &LogRegOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.loss_trace.windows(2).all(|w| w[1] <= w[0]));
    }
}

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40)
        .prop_flat_map(|n| (prop::collection::vec(-5.0f64..5.0, n), prop::collection::vec(any::<bool>(), n)))
        .prop_filter("both classes", |(_, y)| y.iter().any(|&v| v) && y.iter().any(|&v| !v))
}

proptest! {
    #[test]
    fn auc_is_invariant_under_monotone_maps((s, y) in scored_labels()) {
        let base = roc_auc(&s, &y).unwrap();
        let mapped: Vec<f64> = s.iter().map(|v| (v * 0.7).exp() + 3.0).collect();
        prop_assert_eq!(roc_auc(&mapped, &y).unwrap(), base);
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn negating_scores_complements_auc((s, y) in scored_labels()) {
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let sum = roc_auc(&s, &y).unwrap() + roc_auc(&neg, &y).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn folds_partition_and_stratify(y in prop::collection::vec(any::<bool>(), 20..200), seed in any::<u64>()) {
        let pos = y.iter().filter(|&&v| v).count();
        prop_assume!(pos >= 5 && y.len() - pos >= 5);
        let a = stratified_folds(&y, 5, seed).unwrap();
        for f in 0..5 {
            let p = (0..y.len()).filter(|&i| a[i] == f && y[i]).count();
            let n = (0..y.len()).filter(|&i| a[i] == f && !y[i]).count();
            prop_assert!(p >= pos / 5 && p <= pos / 5 + 1);
            prop_assert!(n + p >= 1);
        }
    }
}
