//! Reverse-mode tape over coarse tensor operations.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so the backward sweep is a single reverse scan.

use std::collections::HashMap;

use super::ops;
use super::param::{GradBuffer, ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv2d { input: NodeId, kernel: NodeId, bias: NodeId },
    Dense { input: NodeId, weight: NodeId, bias: Option<NodeId> },
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulConst(NodeId, Tensor),
    Concat(Vec<NodeId>),
    Slice { input: NodeId, start: usize },
    Reshape(NodeId),
    Softmax(NodeId),
    WeightedSum { weights: NodeId, items: Vec<NodeId> },
    LstmCell { gates: NodeId, cell: NodeId },
    SquaredError { pred: NodeId, target: Vec<f64>, weights: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match node.op {
            Op::Param(pid) => &self.params.get(pid).value,
            _ => &node.value,
        }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Input that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Input whose gradient is tracked (used by gradient checks).
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let n = self.push(Op::Param(id), Tensor::zeros(&[0]), true);
        self.param_nodes.insert(id, n);
        n
    }

    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = ops::conv2d(self.value(input), self.value(kernel), self.value(bias))?;
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(Op::Conv2d { input, kernel, bias }, v, rg))
    }

    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let v = ops::dense(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
        )?;
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(Op::Dense { input, weight, bias }, v, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = ops::relu(self.value(x));
        let rg = self.rg(x);
        self.push(Op::Relu(x), v, rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = ops::sigmoid(self.value(x));
        let rg = self.rg(x);
        self.push(Op::Sigmoid(x), v, rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = ops::tanh(self.value(x));
        let rg = self.rg(x);
        self.push(Op::Tanh(x), v, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), v, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), v, rg))
    }

    /// Elementwise product with a fixed tensor (dropout masks).
    pub fn mul_const(&mut self, x: NodeId, mask: Tensor) -> Result<NodeId> {
        let mask = mask.reshape(self.value(x).shape())?;
        let v = self.value(x).zip_map(&mask, |a, m| a * m)?;
        let rg = self.rg(x);
        Ok(self.push(Op::MulConst(x, mask), v, rg))
    }

    /// Flat concatenation.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::Concat(parts.to_vec()), Tensor::from_vec(data), rg)
    }

    /// Flat slice `[start, start+len)`.
    pub fn slice(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let src = self.value(input);
        if start + len > src.len() {
            return Err(Error::shape("slice", src.shape(), &[start + len]));
        }
        let v = Tensor::from_vec(src.data()[start..start + len].to_vec());
        let rg = self.rg(input);
        Ok(self.push(Op::Slice { input, start }, v, rg))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(input).reshape(shape)?;
        let rg = self.rg(input);
        Ok(self.push(Op::Reshape(input), v, rg))
    }

    pub fn flatten(&mut self, input: NodeId) -> Result<NodeId> {
        let n = self.value(input).len();
        self.reshape(input, &[n])
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let v = ops::softmax(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(Op::Softmax(x), v, rg))
    }

    /// `Σ_k weights[k] · items[k]` for a weight vector and equally shaped items.
    pub fn weighted_sum(&mut self, weights: NodeId, items: &[NodeId]) -> Result<NodeId> {
        let w = self.value(weights);
        if w.len() != items.len() || items.is_empty() {
            return Err(Error::shape("weighted_sum", w.shape(), &[items.len()]));
        }
        let mut acc = Tensor::zeros(self.value(items[0]).shape());
        for (k, &it) in items.iter().enumerate() {
            let wk = w.data()[k];
            let item = self.value(it);
            if item.shape() != acc.shape() {
                return Err(Error::shape("weighted_sum", item.shape(), acc.shape()));
            }
            for (a, &x) in acc.data_mut().iter_mut().zip(item.data()) {
                *a += wk * x;
            }
        }
        let rg = self.rg(weights) || items.iter().any(|&i| self.rg(i));
        Ok(self.push(
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
            acc,
            rg,
        ))
    }

    /// LSTM gate update from pre-activations `gates` (`4H`) and previous cell
    /// state (`H`). The output is `[h; c]` of length `2H`.
    pub fn lstm_cell(&mut self, gates: NodeId, cell: NodeId) -> Result<NodeId> {
        let z = self.value(gates);
        let c = self.value(cell);
        if z.len() != 4 * c.len() {
            return Err(Error::shape("lstm_cell", z.shape(), c.shape()));
        }
        let (h, c) = ops::lstm_cell(z.data(), c.data());
        let mut out = h;
        out.extend(c);
        let rg = self.rg(gates) || self.rg(cell);
        Ok(self.push(Op::LstmCell { gates, cell }, Tensor::from_vec(out), rg))
    }

    /// `Σ_k weights[k]·(pred[k] − target[k])²` as a one-element tensor.
    pub fn squared_error(&mut self, pred: NodeId, target: &[f64], weights: &[f64]) -> Result<NodeId> {
        let p = self.value(pred);
        if p.len() != target.len() || p.len() != weights.len() {
            return Err(Error::shape("squared_error", p.shape(), &[target.len()]));
        }
        let loss: f64 = p
            .data()
            .iter()
            .zip(target)
            .zip(weights)
            .map(|((y, t), w)| w * (y - t) * (y - t))
            .sum();
        let rg = self.rg(pred);
        Ok(self.push(
            Op::SquaredError {
                pred,
                target: target.to_vec(),
                weights: weights.to_vec(),
            },
            Tensor::scalar(loss),
            rg,
        ))
    }

    /// Reverse sweep from a scalar `root`, seeded with gradient 1.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::shape("backward root", self.value(root).shape(), &[1]));
        }
        self.backward_with(root, Tensor::full(self.value(root).shape(), 1.0))
    }

    /// Reverse sweep from `root` seeded with an arbitrary upstream gradient.
    pub fn backward_with(&self, root: NodeId, seed: Tensor) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::Conv2d { input, kernel, bias } => {
                    let (gi, gk, gb) =
                        ops::conv2d_backward(self.value(*input), self.value(*kernel), &g)?;
                    self.acc(&mut grads, *input, gi)?;
                    self.acc(&mut grads, *kernel, gk)?;
                    self.acc(&mut grads, *bias, gb)?;
                }
                Op::Dense { input, weight, bias } => {
                    let (gi, gw, gb) =
                        ops::dense_backward(self.value(*input), self.value(*weight), &g)?;
                    self.acc(&mut grads, *input, gi)?;
                    self.acc(&mut grads, *weight, gw)?;
                    if let Some(b) = bias {
                        self.acc(&mut grads, *b, gb)?;
                    }
                }
                Op::Relu(x) => {
                    let gx = ops::relu_backward(&node.value, &g)?;
                    self.acc(&mut grads, *x, gx)?;
                }
                Op::Sigmoid(x) => {
                    let gx = ops::sigmoid_backward(&node.value, &g)?;
                    self.acc(&mut grads, *x, gx)?;
                }
                Op::Tanh(x) => {
                    let gx = ops::tanh_backward(&node.value, &g)?;
                    self.acc(&mut grads, *x, gx)?;
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *a, g.clone())?;
                    self.acc(&mut grads, *b, g.clone())?;
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |u, v| u * v)?;
                    let gb = g.zip_map(self.value(*a), |u, v| u * v)?;
                    self.acc(&mut grads, *a, ga)?;
                    self.acc(&mut grads, *b, gb)?;
                }
                Op::MulConst(x, mask) => {
                    let gx = g.zip_map(mask, |u, m| u * m)?;
                    self.acc(&mut grads, *x, gx)?;
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let shape = self.value(p).shape().to_vec();
                        let n = self.value(p).len();
                        let gp = Tensor::new(&shape, g.data()[off..off + n].to_vec())?;
                        off += n;
                        self.acc(&mut grads, p, gp)?;
                    }
                }
                Op::Slice { input, start } => {
                    let src = self.value(*input);
                    let mut gi = Tensor::zeros(src.shape());
                    gi.data_mut()[*start..*start + g.len()].copy_from_slice(g.data());
                    self.acc(&mut grads, *input, gi)?;
                }
                Op::Reshape(input) => {
                    let gi = g.reshape(self.value(*input).shape())?;
                    self.acc(&mut grads, *input, gi)?;
                }
                Op::Softmax(x) => {
                    let gx = ops::softmax_backward(&node.value, &g)?;
                    self.acc(&mut grads, *x, gx)?;
                }
                Op::WeightedSum { weights, items } => {
                    let w = self.value(*weights);
                    let mut gw = vec![0.0; items.len()];
                    for (k, &it) in items.iter().enumerate() {
                        let item = self.value(it);
                        gw[k] = item.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
                        let wk = w.data()[k];
                        if self.rg(it) {
                            self.acc(&mut grads, it, g.map(|u| u * wk))?;
                        }
                    }
                    let gw = Tensor::new(w.shape(), gw)?;
                    self.acc(&mut grads, *weights, gw)?;
                }
                Op::LstmCell { gates, cell } => {
                    let c_prev = self.value(*cell);
                    let hd = c_prev.len();
                    let (dz, dc) = ops::lstm_cell_backward(
                        self.value(*gates).data(),
                        c_prev.data(),
                        &g.data()[..hd],
                        &g.data()[hd..],
                    );
                    self.acc(&mut grads, *gates, Tensor::from_vec(dz))?;
                    self.acc(&mut grads, *cell, Tensor::new(c_prev.shape(), dc)?)?;
                }
                Op::SquaredError {
                    pred,
                    target,
                    weights,
                } => {
                    let up = g.data()[0];
                    let p = self.value(*pred);
                    let gp: Vec<f64> = p
                        .data()
                        .iter()
                        .zip(target)
                        .zip(weights)
                        .map(|((y, t), w)| up * 2.0 * w * (y - t))
                        .collect();
                    self.acc(&mut grads, *pred, Tensor::new(p.shape(), gp)?)?;
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn acc(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
        if !self.nodes[id.0].requires_grad {
            return Ok(());
        }
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    /// Parameter gradients gathered into a buffer shaped like the store.
    pub fn param_grads(&self, grads: &Gradients) -> GradBuffer {
        let mut buf = GradBuffer::zeros_like(self.params);
        for (&pid, &node) in &self.param_nodes {
            if let Some(g) = grads.get(node) {
                buf.grads[pid.index()] = g.clone();
            }
        }
        buf
    }
}

/// Per-node gradients from one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}
