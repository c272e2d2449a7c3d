use serde::{Deserialize, Serialize};

use crate::ndgrad::Tensor;

/// Update rule for the network parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    /// `θ ← θ − r·∇θ`
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    t: i32,
}

impl Optimizer {
    pub(crate) fn new(kind: OptimizerKind, lr: f64, sizes: impl Iterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.collect();
        let state = |on: bool| {
            if on {
                sizes.iter().map(|&n| vec![0.0; n]).collect()
            } else {
                Vec::new()
            }
        };
        let adam = matches!(kind, OptimizerKind::Adam { .. });
        Self {
            kind,
            lr,
            first: state(adam),
            second: state(adam),
            t: 0,
        }
    }

    /// Applies one step; `params[i]` is updated with `grads[i]`.
    pub(crate) fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= self.lr * d;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (k, (w, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * d;
                        v[k] = beta2 * v[k] + (1.0 - beta2) * d * d;
                        *w -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + epsilon);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step_is_plain_descent() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5, [2].into_iter());
        let mut p = vec![Tensor::vector(vec![1.0, -1.0])];
        opt.step(&mut p, &[Tensor::vector(vec![2.0, 4.0])]);
        assert_eq!(p[0].data(), &[0.0, -3.0]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut opt = Optimizer::new(OptimizerKind::adam(), 0.01, [2].into_iter());
        let mut p = vec![Tensor::vector(vec![0.0, 0.0])];
        opt.step(&mut p, &[Tensor::vector(vec![3.0, -0.2])]);
        assert!((p[0].data()[0] + 0.01).abs() < 1e-8);
        assert!((p[0].data()[1] - 0.01).abs() < 1e-8);
    }
}
