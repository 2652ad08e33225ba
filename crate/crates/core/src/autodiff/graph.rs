//! Define-by-run reverse-mode tape.
//!
//! A [`Graph`] is built fresh for every mini-batch. Nodes are appended in
//! creation order, so node ids are already a topological order and the
//! backward pass is a single reverse sweep. `backward` does not consume or
//! clear the tape; it can be run again on the same root.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable tensor and the gradient written by the last backward pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub tensor: Tensor,
    pub gradient: Tensor,
}

impl Parameter {
    pub fn new(tensor: Tensor) -> Self {
        let gradient = Tensor::zeros(tensor.shape());
        Parameter { tensor, gradient }
    }
}

/// Backward rule for an operation defined outside the engine.
///
/// Receives the upstream gradient (shaped like the node's output) and the
/// input values, returns one gradient per input (`None` for inputs that are
/// not differentiated).
pub trait CustomBackward {
    fn backward(&self, upstream: &Tensor, inputs: &[&Tensor]) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    Param(usize),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Sub(NodeId, NodeId),
    MulScalar(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    Gather(NodeId, Vec<usize>),
    Square(NodeId),
    LogSoftmax(NodeId),
    Custom(Vec<NodeId>, Box<dyn CustomBackward>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Sub(..) => "sub",
            Op::MulScalar(..) => "mul_scalar",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Gather(..) => "gather",
            Op::Square(_) => "square",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Custom(..) => "custom",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.nodes.iter().map(|n| (n.op.name(), n.value.shape())))
            .finish()
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant input; no gradient is propagated into it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf whose gradient can be read from [`Gradients`].
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Snapshot of a parameter; `slot` is its position in the slice later
    /// handed to [`Graph::backward_into`].
    pub fn param(&mut self, slot: usize, param: &Parameter) -> NodeId {
        self.push(param.tensor.clone(), Op::Param(slot), true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2().ok_or_else(|| mismatch("matmul", av, bv))?;
        let (k2, n) = bv.dims2().ok_or_else(|| mismatch("matmul", av, bv))?;
        if k != k2 {
            return Err(mismatch("matmul", av, bv));
        }
        let out = gemm(m, k, n, av.data(), false, bv.data(), false);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// Adds a length-`n` bias to every row of an `m x n` matrix.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (_, n) = xv.dims2().ok_or_else(|| mismatch("add_bias", xv, bv))?;
        if bv.shape() != [n] {
            return Err(mismatch("add_bias", xv, bv));
        }
        let b = bv.data();
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, bi) in row.iter_mut().zip(b) {
                *o += bi;
            }
        }
        let value = xv.with_data(out);
        let rg = self.needs(x) || self.needs(bias);
        Ok(self.push(value, Op::AddBias(x, bias), rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let value = xv.with_data(xv.data().iter().map(|&v| v.max(0.0)).collect());
        let rg = self.needs(x);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let value = xv.with_data(xv.data().iter().map(|&v| sigmoid_scalar(v)).collect());
        let rg = self.needs(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("sub", av, bv));
        }
        let out = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x - y)
            .collect();
        let value = av.with_data(out);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul_scalar(&mut self, x: NodeId, k: f64) -> NodeId {
        let xv = self.value(x);
        let value = xv.with_data(xv.data().iter().map(|v| v * k).collect());
        let rg = self.needs(x);
        self.push(value, Op::MulScalar(x, k), rg)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.value(x).data().iter().sum();
        let rg = self.needs(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::invalid("mean of an empty tensor"));
        }
        let m = xv.data().iter().sum::<f64>() / xv.len() as f64;
        let rg = self.needs(x);
        Ok(self.push(Tensor::scalar(m), Op::Mean(x), rg))
    }

    /// Picks entries of the row-major flat view into a 1-D tensor.
    pub fn gather(&mut self, x: NodeId, indices: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        let data = xv.data();
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            match data.get(i) {
                Some(&v) => out.push(v),
                None => {
                    return Err(Error::IndexOutOfRange {
                        what: "gather",
                        index: i,
                        len: data.len(),
                    })
                }
            }
        }
        let rg = self.needs(x);
        Ok(self.push(Tensor::vector(out), Op::Gather(x, indices.to_vec()), rg))
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let value = xv.with_data(xv.data().iter().map(|v| v * v).collect());
        let rg = self.needs(x);
        self.push(value, Op::Square(x), rg)
    }

    /// Row-wise log-softmax of an `m x n` matrix.
    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let (_, n) = xv.dims2().ok_or_else(|| {
            Error::invalid(format!("log_softmax needs a matrix, got {:?}", xv.shape()))
        })?;
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let value = xv.with_data(out);
        let rg = self.needs(x);
        Ok(self.push(value, Op::LogSoftmax(x), rg))
    }

    /// Records an externally computed value with its own backward rule.
    pub fn custom(
        &mut self,
        inputs: &[NodeId],
        value: Tensor,
        backward: Box<dyn CustomBackward>,
    ) -> NodeId {
        let rg = inputs.iter().any(|&i| self.needs(i));
        self.push(value, Op::Custom(inputs.to_vec(), backward), rg)
    }

    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| self.nodes[i].value.with_data(g)))
            .collect();
        Ok(Gradients { grads })
    }

    /// Runs [`Graph::backward`] and writes the gradient of every parameter
    /// node into `params[slot].gradient`. Parameters the root does not
    /// depend on get a zero gradient.
    pub fn backward_into(&self, root: NodeId, params: &mut [Parameter]) -> Result<()> {
        let grads = self.backward(root)?;
        for p in params.iter_mut() {
            p.gradient = Tensor::zeros(p.tensor.shape());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(slot) = node.op {
                let param = params.get_mut(slot).ok_or(Error::IndexOutOfRange {
                    what: "parameter slot",
                    index: slot,
                    len: 0,
                })?;
                if param.tensor.shape() != node.value.shape() {
                    return Err(mismatch("backward_into", &param.tensor, &node.value));
                }
                if let Some(g) = grads.get(NodeId(i)) {
                    for (acc, v) in param.gradient.data_mut().iter_mut().zip(g.data()) {
                        *acc += v;
                    }
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let mut send = |id: NodeId, contribution: Vec<f64>| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contribution),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2().expect("matmul operand is 2-D");
                let n = val(*b).dims2().expect("matmul operand is 2-D").1;
                if self.nodes[a.0].requires_grad {
                    send(*a, gemm(m, n, k, g, false, val(*b).data(), true));
                }
                if self.nodes[b.0].requires_grad {
                    send(*b, gemm(k, m, n, val(*a).data(), true, g, false));
                }
            }
            Op::AddBias(x, b) => {
                let n = val(*b).len();
                send(*x, g.to_vec());
                let mut gb = vec![0.0; n];
                for row in g.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
                }
                send(*b, gb);
            }
            Op::Relu(x) => {
                let out = val(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&xi, &gi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect();
                send(*x, out);
            }
            Op::Sigmoid(x) => {
                let out = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gi)| gi * y * (1.0 - y))
                    .collect();
                send(*x, out);
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::MulScalar(x, k) => send(*x, g.iter().map(|v| v * k).collect()),
            Op::Sum(x) => send(*x, vec![g[0]; val(*x).len()]),
            Op::Mean(x) => {
                let len = val(*x).len();
                send(*x, vec![g[0] / len as f64; len]);
            }
            Op::Gather(x, indices) => {
                let mut out = vec![0.0; val(*x).len()];
                for (&i, &gi) in indices.iter().zip(g) {
                    out[i] += gi;
                }
                send(*x, out);
            }
            Op::Square(x) => {
                let out = val(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(xi, gi)| 2.0 * xi * gi)
                    .collect();
                send(*x, out);
            }
            Op::LogSoftmax(x) => {
                let n = node.value.dims2().expect("log_softmax output is 2-D").1;
                let mut out = vec![0.0; g.len()];
                for ((o, y), gr) in out
                    .chunks_mut(n)
                    .zip(node.value.data().chunks(n))
                    .zip(g.chunks(n))
                {
                    let total: f64 = gr.iter().sum();
                    for j in 0..n {
                        o[j] = gr[j] - y[j].exp() * total;
                    }
                }
                send(*x, out);
            }
            Op::Custom(inputs, rule) => {
                let upstream = node.value.with_data(g.to_vec());
                let values: Vec<&Tensor> = inputs.iter().map(|&i| val(i)).collect();
                for (&i, contribution) in inputs.iter().zip(rule.backward(&upstream, &values)) {
                    if let Some(c) = contribution {
                        debug_assert_eq!(c.len(), val(i).len());
                        send(i, c);
                    }
                }
            }
        }
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}
