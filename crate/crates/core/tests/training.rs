mod common;

use common::mixed_batch;
use minerva_core::mine::{v_objective, Batch};
use minerva_core::minerva::{select_features, stage1_train};
use minerva_core::ndgrad::{Graph, Tensor};
use minerva_core::statnet::{init_params, StatNet};
use minerva_core::synth::{gen_experiment_a, ExpASpec};
use minerva_core::{Column, Dataset, NamedColumn, NetworkSpec, Permutation, SeededRng, TrainConfig};
use proptest::prelude::*;

fn small_net(data: &Dataset) -> NetworkSpec {
    let mut spec = NetworkSpec::for_dataset(data);
    spec.hidden_width = 16;
    spec.n_residual_blocks = 1;
    spec
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        batch_size: 128,
        stage1_max_steps: 150,
        stage2_max_steps: 150,
        eval_every: 50,
        eval_batches: 4,
        ..TrainConfig::default()
    }
}

fn float_data(features: Vec<Vec<f64>>, y: Vec<f64>) -> Dataset {
    let cols = features
        .into_iter()
        .enumerate()
        .map(|(j, v)| NamedColumn::new(format!("x{j}"), Column::Float(v)))
        .collect();
    Dataset::new(cols, NamedColumn::new("y", Column::Float(y))).unwrap()
}

fn small_exp_a(seed: u64) -> Dataset {
    gen_experiment_a(&ExpASpec {
        d: 4,
        m: 3,
        k0: 1,
        k1: 3,
        n: 1500,
        seed,
    })
    .unwrap()
    .dataset
}

#[test]
fn stage1_is_deterministic() {
    let data = small_exp_a(0);
    let spec = small_net(&data);
    let a = stage1_train(&data, &spec, &quick(5)).unwrap();
    let b = stage1_train(&data, &spec, &quick(5)).unwrap();
    assert_eq!(a.params.tensors(), b.params.tensors());
    assert_eq!(a.best, b.best);
    let c = stage1_train(&data, &spec, &quick(6)).unwrap();
    assert_ne!(a.params.tensors(), c.params.tensors());
}

#[test]
fn selection_is_deterministic() {
    let data = small_exp_a(1);
    let spec = small_net(&data);
    let a = select_features(&data, &spec, &quick(2)).unwrap();
    let b = select_features(&data, &spec, &quick(2)).unwrap();
    assert_eq!(a.selected, b.selected);
    assert_eq!(a.final_p, b.final_p);
    assert_eq!(a.stage1_steps, b.stage1_steps);
    assert_eq!(a.stage2_steps, b.stage2_steps);
    let ta: Vec<f64> = a.mi_trace.iter().map(|t| t.mi_nats()).collect();
    let tb: Vec<f64> = b.mi_trace.iter().map(|t| t.mi_nats()).collect();
    assert_eq!(ta, tb);
}

#[test]
fn no_penalty_keeps_every_feature() {
    let data = small_exp_a(2);
    let spec = small_net(&data);
    let cfg = TrainConfig {
        c1: 0.0,
        c2: 0.0,
        ..quick(0)
    };
    let r = select_features(&data, &spec, &cfg).unwrap();
    assert_eq!(r.selected, vec![0, 1, 2, 3]);
    for w in &r.final_p.0 {
        assert!((w - 1.0).abs() < 0.5, "{:?}", r.final_p);
    }
}

#[test]
fn single_copied_feature_is_selected() {
    let mut rng = SeededRng::new(3, 0);
    let x: Vec<f64> = (0..2000).map(|_| rng.normal()).collect();
    let data = float_data(vec![x.clone()], x);
    let r = select_features(&data, &small_net(&data), &quick(1)).unwrap();
    assert_eq!(r.selected, vec![0]);
}

#[test]
fn coin_flip_target_keeps_no_information() {
    let mut rng = SeededRng::new(4, 0);
    let features: Vec<Vec<f64>> = (0..4).map(|_| (0..3000).map(|_| rng.normal()).collect()).collect();
    let y: Vec<f64> = (0..3000).map(|_| if rng.uniform() < 0.5 { 0.0 } else { 1.0 }).collect();
    let data = float_data(features, y);
    let r = select_features(&data, &small_net(&data), &quick(0)).unwrap();
    let last = r.mi_trace.last().unwrap().mi_nats();
    assert!(r.selected.is_empty() || last <= 0.05, "{:?} with MI {last}", r.selected);
}

#[test]
fn independent_pair_gives_no_mi() {
    let mut rng = SeededRng::new(8, 0);
    let x: Vec<f64> = (0..10_000).map(|_| rng.normal()).collect();
    let y: Vec<f64> = (0..10_000).map(|_| rng.normal()).collect();
    let data = float_data(vec![x], y);
    let cfg = TrainConfig {
        stage1_max_steps: 400,
        ..quick(0)
    };
    let r = stage1_train(&data, &small_net(&data), &cfg).unwrap();
    assert!(r.best.mi_nats() < 0.05, "{}", r.best.mi_nats());
}

#[test]
fn invalid_inputs_are_rejected() {
    let data = small_exp_a(0);
    let cfg = TrainConfig {
        learning_rate: -1.0,
        ..quick(0)
    };
    assert!(select_features(&data, &small_net(&data), &cfg).is_err());
    let tiny = small_exp_a(0).take_rows(&(0..100).collect::<Vec<_>>());
    assert!(select_features(&tiny, &small_net(&tiny), &quick(0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Reindexing rows, with σ conjugated to match, leaves both terms of v unchanged.
    #[test]
    fn row_order_does_not_change_v(seed in 0u64..500) {
        let batch = mixed_batch(9, seed, seed.is_multiple_of(2));
        let mut spec = NetworkSpec::for_dataset(&batch.data);
        spec.hidden_width = 5;
        spec.n_residual_blocks = 1;
        let params = init_params(&spec, seed).unwrap();

        let n = batch.len();
        let mut pi: Vec<usize> = (0..n).collect();
        SeededRng::new(seed, 3).shuffle(&mut pi);
        let mut inv = vec![0; n];
        for (i, &v) in pi.iter().enumerate() {
            inv[v] = i;
        }
        let sigma = batch.sigma.as_slice();
        let conj: Vec<usize> = (0..n).map(|i| inv[sigma[pi[i]]]).collect();
        let moved = Batch::new(batch.data.take_rows(&pi), Permutation::new(conj).unwrap()).unwrap();

        let eval = |b: &Batch| {
            let mut g = Graph::new();
            let net = StatNet::bind(&mut g, &spec, &params, false).unwrap();
            let p = g.constant(Tensor::matrix(1, 3, vec![0.7, -1.2, 0.4]).unwrap());
            v_objective(&mut g, &net, p, b).unwrap().estimate(&g)
        };
        let a = eval(&batch);
        let b = eval(&moved);
        prop_assert!((a.mu - b.mu).abs() < 1e-12);
        prop_assert!((a.log_nu - b.log_nu).abs() < 1e-12);
    }
}
