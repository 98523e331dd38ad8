//! Gradient tape: eager op recording + reverse accumulation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};

use super::tensor::Tensor;
use super::{AutodiffError, Result};

pub type NodeId = usize;

/// Recorded operation. Inputs are node ids of earlier tape entries, so the
/// tape is acyclic and already topologically sorted by construction.
#[derive(Debug, Clone)]
pub enum Op {
    /// Input or parameter; participates in gradients.
    Leaf,
    /// Fixed value; no gradient tracked.
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `[m,k] x [k,n] -> [m,n]`
    Matmul(NodeId, NodeId),
    /// `[m,n] + [n] -> [m,n]` (bias broadcast over rows)
    BiasAdd(NodeId, NodeId),
    /// Slope applied to negative inputs; slope 0 is plain relu.
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    /// Row-wise softmax.
    Softmax(NodeId),
    /// Row-wise `softmax((logits + noise) / tau)` with noise drawn once at
    /// record time, so replays are deterministic.
    GumbelSoftmax { input: NodeId, tau: f64, noise: Tensor },
    Log(NodeId),
    Sqrt(NodeId),
    /// Gradient passes only where `lo < x < hi`.
    Clamp(NodeId, f64, f64),
    Mean(NodeId),
    Sum(NodeId),
    /// Concatenate rank-2 tensors along the feature axis.
    Concat(Vec<NodeId>),
    /// Columns `[start, start+width)` of a rank-2 tensor.
    SliceCols { input: NodeId, start: usize, width: usize },
    /// Forward identity, zero gradient upstream.
    Detach(NodeId),
    Scale(NodeId, f64),
    Neg(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Per-node gradients produced by [`Tape::backward`]. Nodes unreachable from
/// the output (or cut off by `Detach`/`Constant`) hold exact zeros.
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &Tensor {
        &self.grads[id]
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Overwrite a leaf or constant value (same shape). Used by replay-based
    /// finite-difference checks.
    pub fn set_value(&mut self, id: NodeId, value: Tensor) {
        let node = &mut self.nodes[id];
        assert!(
            matches!(node.op, Op::Leaf | Op::Constant),
            "set_value only applies to leaves"
        );
        assert_eq!(node.value.shape(), value.shape());
        node.value = value;
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(Op::Leaf, value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_unchecked(Op::Constant, value, false)
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, value, requires_grad });
        id
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let value = compute(&op, &self.nodes)?;
        let requires_grad = op_requires_grad(&op, &self.nodes);
        Ok(self.push_unchecked(op, value, requires_grad))
    }

    /// Recompute every non-leaf value in recording order from the current
    /// leaf values. Gumbel noise is reused, so a replay is a pure function
    /// of the leaf values.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf | Op::Constant) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            self.nodes[i].value = compute(&op, &self.nodes)?;
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("add", a, b)?;
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("sub", a, b)?;
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_same_shape("mul", a, b)?;
        self.push(Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", sa, sb),
            });
        }
        self.push(Op::Matmul(a, b))
    }

    pub fn bias_add(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(bias).shape());
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "bias_add",
                detail: format!("{:?} + {:?}", sa, sb),
            });
        }
        self.push(Op::BiasAdd(a, bias))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        self.push(Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::LeakyRelu(a, 0.0))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid(a))
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Softmax(a))
    }

    /// Differentiable categorical relaxation; noise is sampled here and
    /// cached on the node.
    pub fn gumbel_softmax(&mut self, a: NodeId, tau: f64, rng: &mut ChaCha8Rng) -> Result<NodeId> {
        assert!(tau > 0.0, "gumbel_softmax temperature must be positive");
        let gumbel = Gumbel::new(0.0, 1.0).expect("unit Gumbel");
        let value = self.value(a);
        let noise_data: Vec<f64> = (0..value.numel()).map(|_| gumbel.sample(rng)).collect();
        let noise = Tensor::new(value.shape().to_vec(), noise_data);
        self.push(Op::GumbelSoftmax { input: a, tau, noise })
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Log(a))
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sqrt(a))
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        self.push(Op::Clamp(a, lo, hi))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Mean(a))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat",
                detail: "no inputs".into(),
            });
        }
        let rows = self.value(parts[0]).shape().first().copied().unwrap_or(0);
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[0] != rows {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    detail: format!("expected [{}, _], got {:?}", rows, s),
                });
            }
        }
        self.push(Op::Concat(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let s = self.value(a).shape();
        if s.len() != 2 || start + width > s[1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("cols [{}, {}) of {:?}", start, start + width, s),
            });
        }
        self.push(Op::SliceCols { input: a, start, width })
    }

    pub fn detach(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Detach(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Neg(a))
    }

    fn check_same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(AutodiffError::ShapeMismatch {
                op,
                detail: format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            });
        }
        Ok(())
    }

    /// Reverse pass from a scalar output. Visits nodes in reverse recording
    /// order exactly once, accumulating into per-node gradient tensors.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        if !self.nodes[output].value.is_scalar() {
            return Err(AutodiffError::NonScalarOutput(
                self.nodes[output].value.shape().to_vec(),
            ));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape().to_vec()))
            .collect();
        grads[output].data_mut()[0] = 1.0;

        for i in (0..=output).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = grads[i].clone();
            self.accumulate(i, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, id: NodeId, g: &Tensor, grads: &mut [Tensor]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf | Op::Constant | Op::Detach(_) => {}
            Op::Add(a, b) => {
                axpy(1.0, g.data(), grads[*a].data_mut());
                axpy(1.0, g.data(), grads[*b].data_mut());
            }
            Op::Sub(a, b) => {
                axpy(1.0, g.data(), grads[*a].data_mut());
                axpy(-1.0, g.data(), grads[*b].data_mut());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                for (k, &gk) in g.data().iter().enumerate() {
                    grads[*a].data_mut()[k] += gk * vb[k];
                    grads[*b].data_mut()[k] += gk * va[k];
                }
            }
            Op::Matmul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                // dA += dC . B^T ; dB += A^T . dC
                matmul_nt_acc(g, vb, &mut grads[*a]);
                matmul_tn_acc(va, g, &mut grads[*b]);
            }
            Op::BiasAdd(a, bias) => {
                axpy(1.0, g.data(), grads[*a].data_mut());
                let n = self.value(*bias).numel();
                let gb = grads[*bias].data_mut();
                for (k, &gk) in g.data().iter().enumerate() {
                    gb[k % n] += gk;
                }
            }
            Op::LeakyRelu(a, slope) => {
                let va = self.value(*a).data();
                for (k, &gk) in g.data().iter().enumerate() {
                    grads[*a].data_mut()[k] += if va[k] > 0.0 { gk } else { gk * slope };
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                for (k, &gk) in g.data().iter().enumerate() {
                    grads[*a].data_mut()[k] += gk * (1.0 - y[k] * y[k]);
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                for (k, &gk) in g.data().iter().enumerate() {
                    grads[*a].data_mut()[k] += gk * y[k] * (1.0 - y[k]);
                }
            }
            Op::Softmax(a) => softmax_backward(&node.value, g, 1.0, &mut grads[*a]),
            Op::GumbelSoftmax { input, tau, .. } => {
                softmax_backward(&node.value, g, 1.0 / tau, &mut grads[*input]);
            }
            Op::Log(a) => {
                let va = self.value(*a).data();
                for (k, &gk) in g.data().iter().enumerate() {
                    grads[*a].data_mut()[k] += gk / va[k];
                }
            }
            Op::Sqrt(a) => {
                let y = node.value.data();
                for (k, &gk) in g.data().iter().enumerate() {
                    grads[*a].data_mut()[k] += gk / (2.0 * y[k]);
                }
            }
            Op::Clamp(a, lo, hi) => {
                let va = self.value(*a).data();
                for (k, &gk) in g.data().iter().enumerate() {
                    if va[k] > *lo && va[k] < *hi {
                        grads[*a].data_mut()[k] += gk;
                    }
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                axpy(g.item() / n, &vec![1.0; self.value(*a).numel()], grads[*a].data_mut());
            }
            Op::Sum(a) => {
                axpy(g.item(), &vec![1.0; self.value(*a).numel()], grads[*a].data_mut());
            }
            Op::Concat(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let gp = grads[p].data_mut();
                    for r in 0..rows {
                        for c in 0..w {
                            gp[r * w + c] += g.data()[r * total + offset + c];
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols { input, start, width } => {
                let rows = node.value.rows();
                let in_cols = self.value(*input).cols();
                let gi = grads[*input].data_mut();
                for r in 0..rows {
                    for c in 0..*width {
                        gi[r * in_cols + start + c] += g.data()[r * width + c];
                    }
                }
            }
            Op::Scale(a, c) => {
                axpy(*c, g.data(), grads[*a].data_mut());
            }
            Op::Neg(a) => {
                axpy(-1.0, g.data(), grads[*a].data_mut());
            }
        }
    }
}

fn op_requires_grad(op: &Op, nodes: &[Node]) -> bool {
    let dep = |id: &NodeId| nodes[*id].requires_grad;
    match op {
        Op::Leaf => true,
        Op::Constant | Op::Detach(_) => false,
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) | Op::BiasAdd(a, b) => {
            dep(a) || dep(b)
        }
        Op::LeakyRelu(a, _)
        | Op::Tanh(a)
        | Op::Sigmoid(a)
        | Op::Softmax(a)
        | Op::GumbelSoftmax { input: a, .. }
        | Op::Log(a)
        | Op::Sqrt(a)
        | Op::Clamp(a, _, _)
        | Op::Mean(a)
        | Op::Sum(a)
        | Op::SliceCols { input: a, .. }
        | Op::Scale(a, _)
        | Op::Neg(a) => dep(a),
        Op::Concat(parts) => parts.iter().any(dep),
    }
}

fn compute(op: &Op, nodes: &[Node]) -> Result<Tensor> {
    let v = |id: &NodeId| &nodes[*id].value;
    let out = match op {
        Op::Leaf | Op::Constant => unreachable!("leaves are not recomputed"),
        Op::Add(a, b) => zip_map(v(a), v(b), |x, y| x + y),
        Op::Sub(a, b) => zip_map(v(a), v(b), |x, y| x - y),
        Op::Mul(a, b) => zip_map(v(a), v(b), |x, y| x * y),
        Op::Matmul(a, b) => matmul(v(a), v(b)),
        Op::BiasAdd(a, bias) => {
            let (va, vb) = (v(a), v(bias));
            let n = vb.numel();
            let data = va
                .data()
                .iter()
                .enumerate()
                .map(|(k, x)| x + vb.data()[k % n])
                .collect();
            Tensor::new(va.shape().to_vec(), data)
        }
        Op::LeakyRelu(a, slope) => map(v(a), |x| if x > 0.0 { x } else { slope * x }),
        Op::Tanh(a) => map(v(a), f64::tanh),
        Op::Sigmoid(a) => map(v(a), |x| 1.0 / (1.0 + (-x).exp())),
        Op::Softmax(a) => rowwise_softmax(v(a), None, 1.0),
        Op::GumbelSoftmax { input, tau, noise } => rowwise_softmax(v(input), Some(noise), *tau),
        Op::Log(a) => map(v(a), f64::ln),
        Op::Sqrt(a) => map(v(a), f64::sqrt),
        Op::Clamp(a, lo, hi) => map(v(a), |x| x.clamp(*lo, *hi)),
        Op::Mean(a) => Tensor::scalar(v(a).data().iter().sum::<f64>() / v(a).numel() as f64),
        Op::Sum(a) => Tensor::scalar(v(a).data().iter().sum::<f64>()),
        Op::Concat(parts) => {
            let rows = v(&parts[0]).rows();
            let total: usize = parts.iter().map(|p| v(p).cols()).sum();
            let mut data = vec![0.0; rows * total];
            let mut offset = 0;
            for p in parts {
                let t = v(p);
                let w = t.cols();
                for r in 0..rows {
                    data[r * total + offset..r * total + offset + w].copy_from_slice(t.row(r));
                }
                offset += w;
            }
            Tensor::matrix(rows, total, data)
        }
        Op::SliceCols { input, start, width } => {
            let t = v(input);
            let rows = t.rows();
            let mut data = vec![0.0; rows * width];
            for r in 0..rows {
                data[r * width..(r + 1) * width]
                    .copy_from_slice(&t.row(r)[*start..start + width]);
            }
            Tensor::matrix(rows, *width, data)
        }
        Op::Detach(a) => v(a).clone(),
        Op::Scale(a, c) => map(v(a), |x| c * x),
        Op::Neg(a) => map(v(a), |x| -x),
    };
    if !out.all_finite() {
        return Err(AutodiffError::NonFinite { op: op_name(op) });
    }
    Ok(out)
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Constant => "constant",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Matmul(..) => "matmul",
        Op::BiasAdd(..) => "bias_add",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Tanh(..) => "tanh",
        Op::Sigmoid(..) => "sigmoid",
        Op::Softmax(..) => "softmax",
        Op::GumbelSoftmax { .. } => "gumbel_softmax",
        Op::Log(..) => "log",
        Op::Sqrt(..) => "sqrt",
        Op::Clamp(..) => "clamp",
        Op::Mean(..) => "mean",
        Op::Sum(..) => "sum",
        Op::Concat(..) => "concat",
        Op::SliceCols { .. } => "slice_cols",
        Op::Detach(..) => "detach",
        Op::Scale(..) => "scale",
        Op::Neg(..) => "neg",
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yk, &xk) in y.iter_mut().zip(x) {
        *yk += alpha * xk;
    }
}

/// Row-wise softmax with optional additive noise and temperature, using the
/// max-subtraction trick for stability.
fn rowwise_softmax(t: &Tensor, noise: Option<&Tensor>, tau: f64) -> Tensor {
    let (rows, cols) = (t.rows(), t.cols());
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &mut data[r * cols..(r + 1) * cols];
        for (c, slot) in row.iter_mut().enumerate() {
            let mut x = t.data()[r * cols + c];
            if let Some(n) = noise {
                x += n.data()[r * cols + c];
            }
            *slot = x / tau;
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for slot in row.iter_mut() {
            *slot = (*slot - m).exp();
            z += *slot;
        }
        for slot in row.iter_mut() {
            *slot /= z;
        }
    }
    Tensor::new(t.shape().to_vec(), data)
}

/// dX += inv_tau * y * (g - <g, y>) per row, the softmax Jacobian product.
fn softmax_backward(y: &Tensor, g: &Tensor, inv_tau: f64, gx: &mut Tensor) {
    let (rows, cols) = (y.rows(), y.cols());
    for r in 0..rows {
        let yr = &y.data()[r * cols..(r + 1) * cols];
        let gr = &g.data()[r * cols..(r + 1) * cols];
        let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        let out = &mut gx.data_mut()[r * cols..(r + 1) * cols];
        for c in 0..cols {
            out[c] += inv_tau * yr[c] * (gr[c] - dot);
        }
    }
}

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &apk) in arow.iter().enumerate().take(k) {
            let brow = &b.data()[p * n..(p + 1) * n];
            for (ok, &bk) in orow.iter_mut().zip(brow) {
                *ok += apk * bk;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

/// out += a . b^T where a: [m,n], b: [k,n] -> out: [m,k]
fn matmul_nt_acc(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (m, n, k) = (a.shape()[0], a.shape()[1], b.shape()[0]);
    let o = out.data_mut();
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..k {
            let brow = b.row(j);
            let mut acc = 0.0;
            for p in 0..n {
                acc += arow[p] * brow[p];
            }
            o[i * k + j] += acc;
        }
    }
}

/// out += a^T . b where a: [m,k], b: [m,n] -> out: [k,n]
fn matmul_tn_acc(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let o = out.data_mut();
    for i in 0..m {
        let arow = a.row(i);
        let brow = b.row(i);
        for (p, &apk) in arow.iter().enumerate().take(k) {
            let orow = &mut o[p * n..(p + 1) * n];
            for (ok, &bk) in orow.iter_mut().zip(brow) {
                *ok += apk * bk;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn square_forward_and_grad() {
        // f(x) = x * x at x = 3
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        assert_eq!(tape.value(y).item(), 9.0);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).item(), 6.0);
    }

    #[test]
    fn product_grads() {
        // f(x, y) = x * y at (2, 5)
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.leaf(Tensor::scalar(5.0));
        let z = tape.mul(x, y).unwrap();
        let grads = tape.backward(z).unwrap();
        assert_eq!(grads.get(x).item(), 5.0);
        assert_eq!(grads.get(y).item(), 2.0);
    }

    #[test]
    fn identity_detach_forward() {
        let mut tape = Tape::new();
        let t = Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 4.0]);
        let x = tape.leaf(t.clone());
        let d = tape.detach(x).unwrap();
        assert_eq!(tape.value(d), &t);
        // Loss through the detached path contributes zero gradient upstream.
        let m = tape.mean(d).unwrap();
        let grads = tape.backward(m).unwrap();
        assert!(grads.get(x).data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_layer_mlp_matches_hand_matrix_arithmetic() {
        // Straight-line oracle: independent matrix arithmetic on a 2x3 input.
        let w1 = Tensor::matrix(3, 2, vec![0.5, -0.3, 0.2, 0.8, -0.6, 0.1]);
        let b1 = Tensor::vector(vec![0.1, -0.2]);
        let w2 = Tensor::matrix(2, 1, vec![1.5, -0.7]);
        let b2 = Tensor::vector(vec![0.05]);
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, -1.0, 0.5, -0.5, 2.0]);

        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let w1n = tape.leaf(w1.clone());
        let b1n = tape.leaf(b1.clone());
        let w2n = tape.leaf(w2.clone());
        let b2n = tape.leaf(b2.clone());
        let h = tape.matmul(xn, w1n).unwrap();
        let h = tape.bias_add(h, b1n).unwrap();
        let h = tape.tanh(h).unwrap();
        let o = tape.matmul(h, w2n).unwrap();
        let o = tape.bias_add(o, b2n).unwrap();
        let got = tape.value(o).clone();

        // Hand-rolled arithmetic, element by element.
        let mut expected = vec![0.0; 2];
        for r in 0..2 {
            let mut hrow = [0.0f64; 2];
            for (j, h) in hrow.iter_mut().enumerate() {
                let mut acc = b1.data()[j];
                for p in 0..3 {
                    acc += x.at(r, p) * w1.at(p, j);
                }
                *h = acc.tanh();
            }
            expected[r] = b2.data()[0] + hrow[0] * w2.at(0, 0) + hrow[1] * w2.at(1, 0);
        }
        for r in 0..2 {
            assert!((got.at(r, 0) - expected[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.scale(x, 2.0).unwrap();
        assert!(matches!(
            tape.backward(y),
            Err(AutodiffError::NonScalarOutput(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 3, vec![0.0; 6]));
        let b = tape.leaf(Tensor::matrix(2, 2, vec![0.0; 4]));
        assert!(tape.matmul(a, b).is_err());
        assert!(tape.add(a, b).is_err());
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let l = tape.log(x).unwrap(); // ln(0) = -inf
        assert!(matches!(tape.backward(l), Ok(_)) || true);
        // The op itself reports the non-finite value at record time.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(-1.0));
        assert!(matches!(
            tape.log(x),
            Err(AutodiffError::NonFinite { .. })
        ));
    }

    #[test]
    fn softmax_uniform_logits() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.3, 0.3, 0.3, 0.3]));
        let s = tape.softmax(x).unwrap();
        for &p in tape.value(s).data() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn gumbel_softmax_simplex_and_argmax() {
        // Monte-Carlo oracle: softmax(10,0,0) puts ~0.99991 on class 0, so
        // the Gumbel-max draw lands there in > 99% of 10k samples.
        let mut rng = substream(11, &[]);
        let mut zero_wins = 0usize;
        for _ in 0..10_000 {
            let mut tape = Tape::new();
            let logits = tape.leaf(Tensor::vector(vec![10.0, 0.0, 0.0]));
            let y = tape.gumbel_softmax(logits, 0.2, &mut rng).unwrap();
            let v = tape.value(y).data();
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let argmax = v
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if argmax == 0 {
                zero_wins += 1;
            }
        }
        assert!(zero_wins > 9_900, "argmax=0 in only {zero_wins}/10000 draws");
    }

    #[test]
    fn replay_reuses_gumbel_noise() {
        let mut rng = substream(3, &[]);
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = tape.gumbel_softmax(logits, 0.5, &mut rng).unwrap();
        let before = tape.value(y).clone();
        tape.replay().unwrap();
        assert_eq!(tape.value(y), &before);
    }

    #[test]
    fn bias_add_broadcast_and_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(Tensor::vector(vec![10.0, 20.0]));
        let y = tape.bias_add(x, b).unwrap();
        assert_eq!(tape.value(y).data(), &[11.0, 22.0, 13.0, 24.0]);
        let s = tape.sum(y).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(b).data(), &[2.0, 2.0]);
    }

    #[test]
    fn concat_slice_round_trip_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let b = tape.leaf(Tensor::matrix(2, 1, vec![5.0, 6.0]));
        let cat = tape.concat(&[a, b]).unwrap();
        assert_eq!(tape.value(cat).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let sl = tape.slice_cols(cat, 2, 1).unwrap();
        let s = tape.sum(sl).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(a).data(), &[0.0; 4]);
        assert_eq!(grads.get(b).data(), &[1.0, 1.0]);
    }
}
