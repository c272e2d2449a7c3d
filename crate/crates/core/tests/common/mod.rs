#![allow(dead_code)]

use minerva_core::mine::{sample_permutation, Batch};
use minerva_core::minerva::{loss, loss_gradients};
use minerva_core::ndgrad::{Graph, NodeId, Tensor};
use minerva_core::statnet::init_params;
use minerva_core::{Column, Dataset, NamedColumn, NetworkSpec, SeededRng};

const H: f64 = 1e-6;

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

type Build = dyn Fn(&mut Graph, &[NodeId]) -> NodeId;

/// Contracts the op output with a fixed random weighting so every entry of
/// the Jacobian shows up in the scalar.
fn check_op(inputs: &[Tensor], weights_seed: u64, build: &Build) -> f64 {
    let eval = |xs: &[Tensor]| -> (f64, Graph, Vec<NodeId>, NodeId) {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &ids);
        let shape = g.shape(out).to_vec();
        let mut rng = SeededRng::new(weights_seed, 99);
        let n: usize = shape.iter().product();
        let w = Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap();
        let wn = g.constant(w);
        let prod = g.mul(out, wn).unwrap();
        let total = g.sum(prod).unwrap();
        (g.value(total).data()[0], g, ids, total)
    };
    let (_, g, ids, total) = eval(inputs);
    let grads = g.backward(total).unwrap();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (k, id) in ids.iter().enumerate() {
        analytic.extend_from_slice(grads.get(*id).unwrap().data());
        for i in 0..inputs[k].numel() {
            let mut up = inputs.to_vec();
            up[k].data_mut()[i] += H;
            let mut dn = inputs.to_vec();
            dn[k].data_mut()[i] -= H;
            numeric.push((eval(&up).0 - eval(&dn).0) / (2.0 * H));
        }
    }
    rel_err(&analytic, &numeric)
}

fn mat(rng: &mut SeededRng, r: usize, c: usize, f: impl Fn(&mut SeededRng) -> f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| f(rng)).collect()).unwrap()
}

fn normal(rng: &mut SeededRng) -> f64 {
    rng.normal()
}

fn positive(rng: &mut SeededRng) -> f64 {
    0.5 + 2.0 * rng.uniform()
}

/// Entries kept at least 0.1 from zero, for ops with a kink there.
fn off_zero(rng: &mut SeededRng) -> f64 {
    let m = 0.1 + rng.uniform();
    if rng.uniform() < 0.5 {
        -m
    } else {
        m
    }
}

/// Relative error of every primitive on one seeded configuration.
pub fn primitive_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = SeededRng::new(seed, 98);
    let r = 2 + rng.below(4);
    let c = 1 + rng.below(4);
    let k = 1 + rng.below(3);
    let a = mat(&mut rng, r, c, normal);
    let b = mat(&mut rng, r, c, normal);
    let row = mat(&mut rng, 1, c, normal);
    let one = mat(&mut rng, 1, 1, normal);
    let pos = mat(&mut rng, r, c, positive);
    let kinked = mat(&mut rng, r, c, off_zero);
    let other = mat(&mut rng, c, k, normal);
    let idx: Vec<usize> = (0..r + 2).map(|_| rng.below(r)).collect();
    let factor = rng.normal();
    let w = seed;

    let mut out: Vec<(&'static str, f64)> = vec![
        (
            "add",
            check_op(&[a.clone(), b.clone()], w, &|g, x| g.add(x[0], x[1]).unwrap()),
        ),
        (
            "add_row",
            check_op(&[a.clone(), row.clone()], w, &|g, x| g.add(x[0], x[1]).unwrap()),
        ),
        (
            "sub",
            check_op(&[a.clone(), b.clone()], w, &|g, x| g.sub(x[0], x[1]).unwrap()),
        ),
        (
            "sub_scalar",
            check_op(&[a.clone(), one.clone()], w, &|g, x| g.sub(x[0], x[1]).unwrap()),
        ),
        (
            "mul",
            check_op(&[a.clone(), b.clone()], w, &|g, x| g.mul(x[0], x[1]).unwrap()),
        ),
        (
            "mul_row",
            check_op(&[a.clone(), row.clone()], w, &|g, x| g.mul(x[0], x[1]).unwrap()),
        ),
        (
            "div",
            check_op(&[a.clone(), pos.clone()], w, &|g, x| g.div(x[0], x[1]).unwrap()),
        ),
        (
            "div_scalar",
            check_op(
                &[
                    a.clone(),
                    Tensor::matrix(1, 1, vec![1.5 + one.data()[0].abs()]).unwrap(),
                ],
                w,
                &|g, x| g.div(x[0], x[1]).unwrap(),
            ),
        ),
        (
            "scale",
            check_op(std::slice::from_ref(&a), w, &move |g, x| g.scale(x[0], factor).unwrap()),
        ),
        (
            "add_scalar",
            check_op(std::slice::from_ref(&a), w, &move |g, x| {
                g.add_scalar(x[0], factor).unwrap()
            }),
        ),
        (
            "tanh",
            check_op(std::slice::from_ref(&a), w, &|g, x| g.tanh(x[0]).unwrap()),
        ),
        (
            "relu",
            check_op(std::slice::from_ref(&kinked), w, &|g, x| g.relu(x[0]).unwrap()),
        ),
        (
            "exp",
            check_op(std::slice::from_ref(&a), w, &|g, x| g.exp(x[0]).unwrap()),
        ),
        (
            "log",
            check_op(std::slice::from_ref(&pos), w, &|g, x| g.log(x[0]).unwrap()),
        ),
        (
            "mean",
            check_op(std::slice::from_ref(&a), w, &|g, x| g.mean(x[0]).unwrap()),
        ),
        (
            "sum",
            check_op(std::slice::from_ref(&a), w, &|g, x| g.sum(x[0]).unwrap()),
        ),
        (
            "l1_norm",
            check_op(std::slice::from_ref(&kinked), w, &|g, x| g.l1_norm(x[0]).unwrap()),
        ),
        (
            "l2_norm",
            check_op(std::slice::from_ref(&a), w, &|g, x| g.l2_norm(x[0]).unwrap()),
        ),
        (
            "log_mean_exp",
            check_op(std::slice::from_ref(&a), w, &|g, x| g.log_mean_exp(x[0]).unwrap()),
        ),
        (
            "matmul",
            check_op(&[a.clone(), other.clone()], w, &|g, x| g.matmul(x[0], x[1]).unwrap()),
        ),
        (
            "concat_cols",
            check_op(&[a.clone(), mat(&mut rng, r, k, normal)], w, &|g, x| {
                g.concat_cols(&[x[0], x[1]]).unwrap()
            }),
        ),
    ];
    let idx2 = idx.clone();
    out.push((
        "gather_rows",
        check_op(std::slice::from_ref(&a), w, &move |g, x| {
            g.gather_rows(x[0], &idx2).unwrap()
        }),
    ));
    out
}

/// A small mixed batch: one categorical and two float features, with a
/// float or categorical target.
pub fn mixed_batch(n: usize, seed: u64, categorical_target: bool) -> Batch {
    let mut rng = SeededRng::new(seed, 97);
    let cat: Vec<u32> = (0..n).map(|_| rng.below(4) as u32).collect();
    let f1: Vec<f64> = (0..n).map(|_| 4.0 * rng.uniform() - 2.0).collect();
    let f2: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let target = if categorical_target {
        Column::Categorical {
            codes: (0..n).map(|_| rng.below(3) as u32).collect(),
            cardinality: 3,
        }
    } else {
        Column::Float((0..n).map(|_| rng.normal()).collect())
    };
    let ds = Dataset::new(
        vec![
            NamedColumn::new(
                "c",
                Column::Categorical {
                    codes: cat,
                    cardinality: 4,
                },
            ),
            NamedColumn::new("f1", Column::Float(f1)),
            NamedColumn::new("f2", Column::Float(f2)),
        ],
        NamedColumn::new("y", target),
    )
    .unwrap();
    let sigma = sample_permutation(n, &mut rng).unwrap();
    Batch::new(ds, sigma).unwrap()
}

/// Relative errors of the full-loss gradients in the network parameters and
/// in the feature weights.
pub fn end_to_end_errors(seed: u64) -> (f64, f64) {
    let mut rng = SeededRng::new(seed, 96);
    let n = 6 + rng.below(10);
    let batch = mixed_batch(n, seed, seed.is_multiple_of(3));
    let mut spec = NetworkSpec::for_dataset(&batch.data);
    spec.hidden_width = 3 + rng.below(5);
    spec.n_residual_blocks = 1 + rng.below(2);
    let params = init_params(&spec, seed).unwrap();
    let p: Vec<f64> = (0..3).map(|_| off_zero(&mut rng)).collect();
    let c1 = 2.0 * rng.uniform();
    let c2 = 2.0 * rng.uniform();
    let a = 0.5 + 2.0 * rng.uniform();

    let (_, theta, gp) = loss_gradients(&spec, &params, &p, &batch, c1, c2, a).unwrap();
    let analytic_theta: Vec<f64> = theta.iter().flat_map(|t| t.data().to_vec()).collect();
    let mut numeric_theta = Vec::with_capacity(analytic_theta.len());
    for k in 0..params.tensors().len() {
        for i in 0..params.tensors()[k].numel() {
            let mut up = params.clone();
            up.tensors_mut()[k].data_mut()[i] += H;
            let mut dn = params.clone();
            dn.tensors_mut()[k].data_mut()[i] -= H;
            let fu = loss(&spec, &up, &p, &batch, c1, c2, a).unwrap();
            let fd = loss(&spec, &dn, &p, &batch, c1, c2, a).unwrap();
            numeric_theta.push((fu - fd) / (2.0 * H));
        }
    }
    let numeric_p: Vec<f64> = (0..p.len())
        .map(|j| {
            let mut up = p.clone();
            up[j] += H;
            let mut dn = p.clone();
            dn[j] -= H;
            let fu = loss(&spec, &params, &up, &batch, c1, c2, a).unwrap();
            let fd = loss(&spec, &params, &dn, &batch, c1, c2, a).unwrap();
            (fu - fd) / (2.0 * H)
        })
        .collect();
    (rel_err(&analytic_theta, &numeric_theta), rel_err(&gp, &numeric_p))
}
