mod common;

use common::mixed_batch;
use minerva_core::mine::Batch;
use minerva_core::minerva::{loss, loss_gradients, regularizer, FeatureWeights};
use minerva_core::statnet::init_params;
use minerva_core::NetworkSpec;
use proptest::prelude::*;

fn small_spec(batch: &Batch) -> NetworkSpec {
    let mut spec = NetworkSpec::for_dataset(&batch.data);
    spec.hidden_width = 6;
    spec.n_residual_blocks = 1;
    spec
}

fn nonzero() -> impl Strategy<Value = f64> {
    prop_oneof![-2.0..-0.05f64, 0.05..2.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_threshold_never_adds_features(
        w in prop::collection::vec(-1.0..1.0f64, 1..20),
        e1 in 0.0..0.5f64,
        e2 in 0.0..0.5f64,
    ) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let w = FeatureWeights(w);
        let wide = w.selected(lo);
        for i in w.selected(hi) {
            prop_assert!(wide.contains(&i));
        }
    }

    #[test]
    fn normalized_l1_is_scale_invariant(
        p in prop::collection::vec(nonzero(), 1..12),
        lambda in 0.01..100.0f64,
    ) {
        let ratio = |v: &[f64]| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| (x / n).abs()).sum::<f64>()
        };
        let scaled: Vec<f64> = p.iter().map(|x| lambda * x).collect();
        prop_assert!((ratio(&p) - ratio(&scaled)).abs() < 1e-12);
        // with the drift term off the regulariser sees only the ratio
        let r1 = regularizer(&p, 1.0, 0.0, 1.0).unwrap();
        let r2 = regularizer(&scaled, 1.0, 0.0, 1.0).unwrap();
        prop_assert!((r1 - r2).abs() < 1e-12);
    }

    #[test]
    fn loss_splits_into_v_plus_regulariser(
        seed in 0u64..1000,
        p in prop::collection::vec(nonzero(), 3),
        c1 in 0.0..5.0f64,
        c2 in 0.0..5.0f64,
        a in 0.1..3.0f64,
    ) {
        let batch = mixed_batch(12, seed, false);
        let spec = small_spec(&batch);
        let params = init_params(&spec, seed).unwrap();
        let full = loss(&spec, &params, &p, &batch, c1, c2, a).unwrap();
        let bare = loss(&spec, &params, &p, &batch, 0.0, 0.0, a).unwrap();
        let reg = regularizer(&p, c1, c2, a).unwrap();
        prop_assert!((full - bare - reg).abs() < 1e-10, "{} vs {}", full - bare, reg);
    }

    #[test]
    fn weight_gradient_matches_finite_differences(
        seed in 0u64..1000,
        p in prop::collection::vec(nonzero(), 3),
    ) {
        let batch = mixed_batch(10, seed, seed.is_multiple_of(2));
        let spec = small_spec(&batch);
        let params = init_params(&spec, seed + 1).unwrap();
        let (c1, c2, a) = (1.0, 1.0, 3f64.sqrt());
        let (_, _, gp) = loss_gradients(&spec, &params, &p, &batch, c1, c2, a).unwrap();
        let h = 1e-5;
        let mut num = Vec::new();
        for j in 0..p.len() {
            let mut up = p.clone();
            up[j] += h;
            let mut dn = p.clone();
            dn[j] -= h;
            let f = |q: &[f64]| loss(&spec, &params, q, &batch, c1, c2, a).unwrap();
            num.push((f(&up) - f(&dn)) / (2.0 * h));
        }
        let diff = gp.iter().zip(&num).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = gp.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
        prop_assert!(diff / scale < 1e-4, "{gp:?} vs {num:?}");
    }
}

#[test]
fn loss_rejects_collapsed_weights() {
    let batch = mixed_batch(8, 0, false);
    let spec = small_spec(&batch);
    let params = init_params(&spec, 0).unwrap();
    let err = loss(&spec, &params, &[0.0, 1e-14, 0.0], &batch, 1.0, 1.0, 1.0).unwrap_err();
    assert!(matches!(err, minerva_core::Error::DegenerateWeights { .. }), "{err}");
}

#[test]
fn regulariser_examples() {
    // ones in dimension d with a = √d contribute c1·√d
    for d in [1usize, 4, 10, 30] {
        let r = regularizer(&vec![1.0; d], 1.0, 1.0, (d as f64).sqrt()).unwrap();
        assert!((r - (d as f64).sqrt()).abs() < 1e-12);
    }
    let mut e1 = vec![0.0; 5];
    e1[0] = 1.0;
    assert!((regularizer(&e1, 1.0, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
    // (3, 4, 0, …): ratio 7/5, drift 0 at a = 5
    let p = [3.0, 4.0, 0.0, 0.0];
    assert!((regularizer(&p, 1.0, 0.0, 5.0).unwrap() - 1.4).abs() < 1e-15);
    assert!(regularizer(&p, 0.0, 1.0, 5.0).unwrap().abs() < 1e-15);
}
