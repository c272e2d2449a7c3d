use super::{GradError, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of an elementwise op lines up with the left.
#[derive(Clone, Copy, Debug)]
enum Broadcast {
    Same,
    /// Right operand is a single row repeated over the leading (batch) dimension.
    Rows,
    Scalar,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId, Broadcast),
    Sub(NodeId, NodeId, Broadcast),
    Mul(NodeId, NodeId, Broadcast),
    Div(NodeId, NodeId, Broadcast),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Mean(NodeId),
    Sum(NodeId),
    ConcatCols(Vec<NodeId>),
    GatherRows(NodeId, Vec<usize>),
    L1Norm(NodeId),
    L2Norm(NodeId),
    LogMeanExp(NodeId),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    is_param: bool,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so ids are
/// topologically sorted by construction.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every parameter leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf; receives a gradient from [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_raw(Op::Leaf, value, true, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_raw(Op::Leaf, value, false, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push_raw(&mut self, op: Op, value: Tensor, is_param: bool, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            is_param,
            requires_grad,
        });
        id
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<NodeId, GradError> {
        if !value.is_finite() {
            return Err(GradError::NonFinite { op: name });
        }
        let requires_grad = self.inputs(&op).iter().any(|i| self.nodes[i.0].requires_grad);
        Ok(self.push_raw(op, value, false, requires_grad))
    }

    fn inputs(&self, op: &Op) -> Vec<NodeId> {
        match op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b, _) | Op::Sub(a, b, _) | Op::Mul(a, b, _) | Op::Div(a, b, _) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Mean(a)
            | Op::Sum(a)
            | Op::GatherRows(a, _)
            | Op::L1Norm(a)
            | Op::L2Norm(a)
            | Op::LogMeanExp(a) => vec![*a],
            Op::ConcatCols(parts) => parts.clone(),
        }
    }

    fn broadcast(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Broadcast, GradError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(Broadcast::Same);
        }
        let vb = self.value(b);
        if vb.numel() == 1 {
            return Ok(Broadcast::Scalar);
        }
        if let ([_, cols], Some((1, bcols))) = (sa, vb.as_matrix_dims()) {
            if *cols == bcols {
                return Ok(Broadcast::Rows);
            }
        }
        Err(GradError::ShapeMismatch {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        make: fn(NodeId, NodeId, Broadcast) -> Op,
        f: fn(f64, f64) -> f64,
    ) -> Result<NodeId, GradError> {
        let bc = self.broadcast(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let rhs = vb.data();
        let cols = rhs.len();
        let data: Vec<f64> = match bc {
            Broadcast::Same => va.data().iter().zip(rhs).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Scalar => va.data().iter().map(|&x| f(x, rhs[0])).collect(),
            Broadcast::Rows => va
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, rhs[i % cols]))
                .collect(),
        };
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(make(a, b, bc), value, name)
    }

    /// Elementwise sum; `b` may broadcast over the batch dimension.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.binary("add", a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.binary("sub", a, b, Op::Sub, |x, y| x - y)
    }

    /// Hadamard product; `b` may broadcast over the batch dimension.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.binary("mul", a, b, Op::Mul, |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        self.binary("div", a, b, Op::Div, |x, y| x / y)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, GradError> {
        let value = self.value(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), value, "scale")
    }

    pub fn add_scalar(&mut self, a: NodeId, offset: f64) -> Result<NodeId, GradError> {
        let value = self.value(a).map(|x| x + offset);
        self.push(Op::AddScalar(a), value, "add_scalar")
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value, "tanh")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), value, "relu")
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        let value = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), value, "exp")
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        let value = self.value(a).map(f64::ln);
        self.push(Op::Log(a), value, "log")
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        let v = self.value(a);
        if v.numel() == 0 {
            return Err(GradError::Empty { op: "mean" });
        }
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.push(Op::Mean(a), Tensor::scalar(m), "mean")
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        let s = self.value(a).data().iter().sum::<f64>();
        self.push(Op::Sum(a), Tensor::scalar(s), "sum")
    }

    pub fn l1_norm(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        let s = self.value(a).data().iter().map(|x| x.abs()).sum::<f64>();
        self.push(Op::L1Norm(a), Tensor::scalar(s), "l1_norm")
    }

    pub fn l2_norm(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        let s = self.value(a).l2_norm();
        self.push(Op::L2Norm(a), Tensor::scalar(s), "l2_norm")
    }

    /// `log(mean(exp(x)))` over all entries, shifted by `max(x)` so large
    /// scores cannot overflow.
    pub fn log_mean_exp(&mut self, a: NodeId) -> Result<NodeId, GradError> {
        let v = self.value(a);
        if v.numel() == 0 {
            return Err(GradError::Empty { op: "log_mean_exp" });
        }
        let value = Tensor::scalar(log_mean_exp(v.data()));
        self.push(Op::LogMeanExp(a), value, "log_mean_exp")
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, GradError> {
        let Some(&first) = parts.first() else {
            return Err(GradError::Empty { op: "concat_cols" });
        };
        let rows = self.matrix_dims("concat_cols", first)?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.matrix_dims("concat_cols", p)?;
            if r != rows {
                return Err(GradError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let value = Tensor::matrix(rows, total, data)?;
        self.push(Op::ConcatCols(parts.to_vec()), value, "concat_cols")
    }

    /// Row lookup: output row `i` is row `indices[i]` of `a`.
    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId, GradError> {
        let (rows, cols) = self.matrix_dims("gather_rows", a)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(GradError::IndexOutOfRange { index: bad, rows });
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let value = Tensor::matrix(indices.len(), cols, data)?;
        self.push(Op::GatherRows(a, indices.to_vec()), value, "gather_rows")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GradError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (&[n, k], &[k2, m]) = (sa, sb) else {
            return Err(GradError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        };
        if k != k2 {
            return Err(GradError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let mut out = vec![0.0; n * m];
        gemm(
            (n, k, m),
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (m, 1),
            &mut out,
        );
        let value = Tensor::matrix(n, m, out)?;
        self.push(Op::MatMul(a, b), value, "matmul")
    }

    fn matrix_dims(&self, op: &'static str, a: NodeId) -> Result<(usize, usize), GradError> {
        match self.shape(a) {
            &[r, c] => Ok((r, c)),
            other => Err(GradError::NotMatrix {
                op,
                shape: other.to_vec(),
            }),
        }
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate additively
    /// over every path, so a parameter used by several sub-expressions gets
    /// the sum of their contributions.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, GradError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(GradError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (node, g) in self.nodes.iter().zip(grads.iter_mut()) {
            if !node.is_param {
                *g = None;
            } else if g.is_none() {
                *g = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k) = (va.shape()[0], va.shape()[1]);
                let m = vb.shape()[1];
                if self.wants(*a) {
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; n * k];
                    gemm((n, m, k), gd, (m, 1), vb.data(), (1, m), &mut da);
                    accumulate(grads, *a, va.shape(), da);
                }
                if self.wants(*b) {
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * m];
                    gemm((k, n, m), va.data(), (1, k), gd, (m, 1), &mut db);
                    accumulate(grads, *b, vb.shape(), db);
                }
            }
            Op::Add(a, b, bc) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.shape(), gd.to_vec());
                }
                if self.wants(*b) {
                    let db = reduce_broadcast(gd.iter().copied(), *bc, self.value(*b).numel());
                    accumulate(grads, *b, self.shape(*b), db);
                }
            }
            Op::Sub(a, b, bc) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.shape(), gd.to_vec());
                }
                if self.wants(*b) {
                    let db = reduce_broadcast(gd.iter().map(|x| -x), *bc, self.value(*b).numel());
                    accumulate(grads, *b, self.shape(*b), db);
                }
            }
            Op::Mul(a, b, bc) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let da = gd
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| gi * broadcast_at(vb, *bc, i))
                        .collect();
                    accumulate(grads, *a, g.shape(), da);
                }
                if self.wants(*b) {
                    let terms = gd.iter().zip(va).map(|(gi, ai)| gi * ai);
                    let db = reduce_broadcast(terms, *bc, vb.len());
                    accumulate(grads, *b, self.shape(*b), db);
                }
            }
            Op::Div(a, b, bc) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let da = gd
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| gi / broadcast_at(vb, *bc, i))
                        .collect();
                    accumulate(grads, *a, g.shape(), da);
                }
                if self.wants(*b) {
                    let terms = gd.iter().zip(va).enumerate().map(|(i, (gi, ai))| {
                        let bi = broadcast_at(vb, *bc, i);
                        -gi * ai / (bi * bi)
                    });
                    let db = reduce_broadcast(terms, *bc, vb.len());
                    accumulate(grads, *b, self.shape(*b), db);
                }
            }
            Op::Scale(a, factor) => {
                accumulate(grads, *a, g.shape(), gd.iter().map(|x| x * factor).collect());
            }
            Op::AddScalar(a) => accumulate(grads, *a, g.shape(), gd.to_vec()),
            Op::Tanh(a) => {
                let y = node.value.data();
                let da = gd.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                accumulate(grads, *a, g.shape(), da);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let da = gd
                    .iter()
                    .zip(x)
                    .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect();
                accumulate(grads, *a, g.shape(), da);
            }
            Op::Exp(a) => {
                let y = node.value.data();
                let da = gd.iter().zip(y).map(|(gi, yi)| gi * yi).collect();
                accumulate(grads, *a, g.shape(), da);
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let da = gd.iter().zip(x).map(|(gi, xi)| gi / xi).collect();
                accumulate(grads, *a, g.shape(), da);
            }
            Op::Mean(a) => {
                let va = self.value(*a);
                let each = gd[0] / va.numel() as f64;
                accumulate(grads, *a, va.shape(), vec![each; va.numel()]);
            }
            Op::Sum(a) => {
                let va = self.value(*a);
                accumulate(grads, *a, va.shape(), vec![gd[0]; va.numel()]);
            }
            Op::L1Norm(a) => {
                let va = self.value(*a);
                let da = va.data().iter().map(|&x| gd[0] * sign(x)).collect();
                accumulate(grads, *a, va.shape(), da);
            }
            Op::L2Norm(a) => {
                let va = self.value(*a);
                let norm = node.value.data()[0];
                let da = if norm > 0.0 {
                    va.data().iter().map(|&x| gd[0] * x / norm).collect()
                } else {
                    vec![0.0; va.numel()]
                };
                accumulate(grads, *a, va.shape(), da);
            }
            Op::LogMeanExp(a) => {
                // d/dx_i log(mean(exp x)) = exp(x_i - y) / n
                let va = self.value(*a);
                let y = node.value.data()[0];
                let n = va.numel() as f64;
                let da = va.data().iter().map(|&x| gd[0] * (x - y).exp() / n).collect();
                accumulate(grads, *a, va.shape(), da);
            }
            Op::ConcatCols(parts) => {
                let rows = g.shape()[0];
                let total = g.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.wants(p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(grads, p, self.shape(p), dp);
                    }
                    offset += w;
                }
            }
            Op::GatherRows(a, indices) => {
                let va = self.value(*a);
                let cols = va.shape()[1];
                let mut da = vec![0.0; va.numel()];
                for (r, &src) in indices.iter().enumerate() {
                    let dst = &mut da[src * cols..(src + 1) * cols];
                    for (d, gi) in dst.iter_mut().zip(&gd[r * cols..(r + 1) * cols]) {
                        *d += gi;
                    }
                }
                accumulate(grads, *a, va.shape(), da);
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn broadcast_at(rhs: &[f64], bc: Broadcast, i: usize) -> f64 {
    match bc {
        Broadcast::Same => rhs[i],
        Broadcast::Scalar => rhs[0],
        Broadcast::Rows => rhs[i % rhs.len()],
    }
}

fn reduce_broadcast(terms: impl Iterator<Item = f64>, bc: Broadcast, len: usize) -> Vec<f64> {
    match bc {
        Broadcast::Same => terms.collect(),
        Broadcast::Scalar => vec![terms.sum()],
        Broadcast::Rows => {
            let mut out = vec![0.0; len];
            for (i, t) in terms.enumerate() {
                out[i % len] += t;
            }
            out
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, shape: &[usize], data: Vec<f64>) {
    let t = Tensor::new(shape.to_vec(), data).expect("gradient shape matches its node");
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

/// Max-shifted `log(mean(exp(values)))`.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let mean = values.iter().map(|v| (v - max).exp()).sum::<f64>() / values.len() as f64;
    max + mean.ln()
}

/// `c = a · b` for an `(m × k)` by `(k × n)` product, strides given as
/// (row stride, column stride). `c` is dense row-major and overwritten.
fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
