//! Dense `f64` tensors with a tape-style reverse-mode autodiff graph.
//!
//! A [`Graph`] is rebuilt for every batch: leaves are registered with
//! [`Graph::param`] (trainable) or [`Graph::constant`], operations append
//! nodes, and [`Graph::backward`] sweeps the tape once in reverse.
//!
//! Elementwise binary ops broadcast their right operand in two ways only: a
//! single value, or a single row repeated over the leading batch dimension.

mod graph;
mod tensor;

pub use graph::{log_mean_exp, Gradients, Graph, NodeId};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a matrix, got shape {shape:?}")]
    NotMatrix { op: &'static str, shape: Vec<usize> },
    #[error("{op}: empty operand")]
    Empty { op: &'static str },
    #[error("shape {shape:?} does not hold {len} values")]
    BadData { shape: Vec<usize>, len: usize },
    #[error("row index {index} out of range for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Central differences of a scalar function of one tensor.
    fn numeric_grad(x: &Tensor, h: f64, f: &dyn Fn(&Tensor) -> f64) -> Vec<f64> {
        (0..x.numel())
            .map(|i| {
                let mut plus = x.clone();
                plus.data_mut()[i] += h;
                let mut minus = x.clone();
                minus.data_mut()[i] -= h;
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let b = g.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 1]);
        assert_eq!(g.value(c).data(), &[3.0, 4.0]);
    }

    #[test]
    fn l2_norm_of_three_four() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![3.0, 4.0]));
        let n = g.l2_norm(x).unwrap();
        assert_eq!(g.value(n).item(), Some(5.0));
    }

    #[test]
    fn mean_exp_of_zeros_is_one() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[4]));
        let e = g.exp(x).unwrap();
        let m = g.mean(e).unwrap();
        assert_eq!(g.value(m).item(), Some(1.0));
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("dimension"), "{msg}");
    }

    #[test]
    fn add_rejects_non_batch_broadcast() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[4, 3]));
        let b = g.constant(Tensor::zeros(&[4, 1]));
        assert!(matches!(g.add(a, b), Err(GradError::ShapeMismatch { .. })));
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn grad_of_log_l2_norm() {
        let f = |t: &Tensor| t.l2_norm().ln();
        let x0 = Tensor::vector(vec![3.0, 4.0]);
        let mut g = Graph::new();
        let x = g.param(x0.clone());
        let n = g.l2_norm(x).unwrap();
        let loss = g.log(n).unwrap();
        let grads = g.backward(loss).unwrap();
        let analytic = grads.get(x).unwrap().data().to_vec();
        let numeric = numeric_grad(&x0, 1e-5, &f);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() / a.abs() < 1e-6, "{a} vs {n}");
        }
        assert!(close(analytic[0], 3.0 / 25.0, 1e-15));
        assert!(close(analytic[1], 4.0 / 25.0, 1e-15));
    }

    #[test]
    fn grad_of_mean_tanh_at_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2]));
        let t = g.tanh(x).unwrap();
        let loss = g.mean(t).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[3]));
        let t = g.tanh(x).unwrap();
        assert!(matches!(g.backward(t), Err(GradError::NonScalarLoss { .. })));
    }

    #[test]
    fn shared_parameter_accumulates_over_two_passes() {
        // loss = sum(w·a) + sum(w·b) → dL/dw = aᵀ1 + bᵀ1
        let mut g = Graph::new();
        let w = g.param(Tensor::matrix(2, 1, vec![0.5, -1.0]).unwrap());
        let a = g.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let b = g.constant(Tensor::matrix(1, 2, vec![3.0, 5.0]).unwrap());
        let pa = g.matmul(a, w).unwrap();
        let pb = g.matmul(b, w).unwrap();
        let sa = g.sum(pa).unwrap();
        let sb = g.sum(pb).unwrap();
        let loss = g.add(sa, sb).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[4.0, 7.0]);
    }

    #[test]
    fn constants_get_no_gradient_and_unused_params_get_zero() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let unused = g.param(Tensor::vector(vec![9.0]));
        let x = g.param(Tensor::vector(vec![1.0, 1.0]));
        let prod = g.mul(x, c).unwrap();
        let loss = g.sum(prod).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0]);
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn log_mean_exp_survives_large_scores() {
        let v = [1000.0, 1000.0 + 3f64.ln()];
        assert!(close(log_mean_exp(&v), 1000.0 + 2f64.ln(), 1e-9));
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(v.to_vec()));
        let l = g.log_mean_exp(x).unwrap();
        let grads = g.backward(l).unwrap();
        let d = grads.get(x).unwrap().data();
        assert!(close(d[0], 0.25, 1e-12) && close(d[1], 0.75, 1e-12));
    }

    #[test]
    fn exp_overflow_is_reported() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1e6]));
        assert_eq!(g.exp(x), Err(GradError::NonFinite { op: "exp" }));
    }

    #[test]
    fn gather_rows_scatters_gradient() {
        let mut g = Graph::new();
        let table = g.param(Tensor::matrix(3, 2, vec![0.0; 6]).unwrap());
        let rows = g.gather_rows(table, &[2, 0, 2]).unwrap();
        let loss = g.sum(rows).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(table).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(matches!(
            g.gather_rows(table, &[3]),
            Err(GradError::IndexOutOfRange { index: 3, rows: 3 })
        ));
    }

    #[test]
    fn row_broadcast_gradient_reduces_over_batch() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let bias = g.param(Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap());
        let gate = g.param(Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap());
        let gated = g.mul(x, gate).unwrap();
        let out = g.add(gated, bias).unwrap();
        let loss = g.sum(out).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(bias).unwrap().data(), &[3.0, 3.0]);
        assert_eq!(grads.get(gate).unwrap().data(), &[9.0, 12.0]);
    }

    #[test]
    fn clipping_caps_joint_norm() {
        let mut a = Tensor::vector(vec![30.0]);
        let mut b = Tensor::vector(vec![40.0]);
        let before = clip_global_norm(&mut [&mut a, &mut b], 10.0);
        assert_eq!(before, 50.0);
        assert!(close(a.data()[0], 6.0, 1e-12) && close(b.data()[0], 8.0, 1e-12));
    }
}
