//! Reverse-mode differentiation over an append-only operation record.
//!
//! Nodes are pushed in evaluation order, so parents always precede children
//! and a single reverse sweep visits every node after all of its consumers.

use super::ops::{self, ConvGeometry};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    Detach,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine { x: Var, scale: f64 },
    MatMul(Var, Var),
    Conv2d { x: Var, k: Var, geo: ConvGeometry },
    ChannelBias { x: Var, b: Var },
    AvgPool { x: Var, size: usize },
    Reshape(Var),
    Sum(Var),
    Softmax(Var),
    CrossEntropy { logits: Var, label: usize },
    L2Norm { x: Var },
    SpikeFire { v: Var, thr: f64, width: f64 },
    ClampLinear { v: Var, thr: f64, width: f64 },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records a value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Constant, false)
    }

    /// Records a differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Param, true)
    }

    pub fn is_param(&self, v: Var) -> bool {
        matches!(self.nodes[v.0].op, Op::Param)
    }

    /// Accumulated gradient of a parameter leaf, populated by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite output from {}", op_name(&op))));
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    /// Copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push_raw(value, Op::Detach, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        self.push(v, Op::Div(a, b), &[a, b])
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let v = self.value(x).map(|a| scale * a + shift);
        self.push(v, Op::Affine { x, scale }, &[x])
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, padding: usize) -> Result<Var> {
        let ks = self.value(k).shape().to_vec();
        let v = ops::conv2d(self.value(x), self.value(k), stride, padding)?;
        let geo = ConvGeometry::new(self.value(x).shape(), ks[0], ks[2], stride, padding)?;
        self.push(v, Op::Conv2d { x, k, geo }, &[x, k])
    }

    /// Adds `b[c]` to every entry of channel `c` of `x[c, ...]`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xs, bs) = (self.value(x).shape(), self.value(b).shape());
        if xs.is_empty() || bs != [xs[0]] {
            return Err(Error::Dimension(format!("channel bias {bs:?} does not match input {xs:?}")));
        }
        let per = self.value(x).len() / xs[0];
        let bd = self.value(b).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, val) in v.data_mut().iter_mut().enumerate() {
            *val += bd[i / per];
        }
        self.push(v, Op::ChannelBias { x, b }, &[x, b])
    }

    pub fn avg_pool2d(&mut self, x: Var, size: usize) -> Result<Var> {
        let v = ops::avg_pool2d(self.value(x), size)?;
        self.push(v, Op::AvgPool { x, size }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        self.push(v, Op::Reshape(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = ops::softmax(self.value(x))?;
        self.push(v, Op::Softmax(x), &[x])
    }

    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let v = Tensor::scalar(ops::cross_entropy(self.value(logits), label)?);
        self.push(v, Op::CrossEntropy { logits, label }, &[logits])
    }

    /// `sqrt(Σ x² + ε²)` as a scalar node. With `ε = 0` the gradient at the
    /// origin is taken to be zero.
    pub fn l2_norm(&mut self, x: Var, epsilon: f64) -> Result<Var> {
        let v = Tensor::scalar(ops::l2_norm(self.value(x), epsilon));
        self.push(v, Op::L2Norm { x }, &[x])
    }

    /// Hard threshold `v ≥ thr` with a boxcar surrogate of height `1/width`
    /// on `|v − thr| ≤ width/2`.
    pub fn spike_fire(&mut self, v: Var, thr: f64, width: f64) -> Result<Var> {
        let out = self.value(v).map(|x| if x >= thr { 1.0 } else { 0.0 });
        self.push(out, Op::SpikeFire { v, thr, width }, &[v])
    }

    /// `clamp((v − thr)/width + 1/2, 0, 1)`: a smooth-enough stand-in for the
    /// threshold whose exact derivative is the boxcar surrogate.
    pub fn clamp_linear(&mut self, v: Var, thr: f64, width: f64) -> Result<Var> {
        let out = self.value(v).map(|x| ((x - thr) / width + 0.5).clamp(0.0, 1.0));
        self.push(out, Op::ClampLinear { v, thr, width }, &[v])
    }

    /// Reverse sweep from a scalar `root`. Parameter gradients are added to
    /// whatever is already accumulated; call [`Tape::zero_grad`] to reset.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let n = root.0 + 1;
        let mut adj: Vec<Option<Tensor>> = vec![None; n];
        adj[root.0] = Some(Tensor::ones(self.value(root).shape()));
        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Param) {
                adj[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        self.grads.resize(self.nodes.len(), None);
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Param) {
                continue;
            }
            let slot = self.grads[i].get_or_insert_with(|| Tensor::zeros(node.value.shape()));
            if let Some(Some(g)) = adj.get(i) {
                slot.add_assign(g);
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, t: Tensor| accumulate(adj, v, t);
        match &node.op {
            Op::Constant | Op::Param | Op::Detach => {}
            &Op::Add(a, b) => {
                if needs(a) {
                    acc(a, g.clone());
                }
                if needs(b) {
                    acc(b, g.clone());
                }
            }
            &Op::Sub(a, b) => {
                if needs(a) {
                    acc(a, g.clone());
                }
                if needs(b) {
                    acc(b, g.map(|x| -x));
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if needs(a) {
                    acc(a, g.zip_map(bv, |x, y| x * y).expect("shape"));
                }
                if needs(b) {
                    acc(b, g.zip_map(av, |x, y| x * y).expect("shape"));
                }
            }
            &Op::Div(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if needs(a) {
                    acc(a, g.zip_map(bv, |x, y| x / y).expect("shape"));
                }
                if needs(b) {
                    let mut t = g.zip_map(av, |x, y| -x * y).expect("shape");
                    for (t, &d) in t.data_mut().iter_mut().zip(bv.data()) {
                        *t /= d * d;
                    }
                    acc(b, t);
                }
            }
            &Op::Affine { x, scale } => acc(x, g.map(|v| v * scale)),
            &Op::MatMul(a, b) => {
                let (ga, gb) = ops::matmul_backward(self.value(a), self.value(b), g, needs(a), needs(b));
                if let Some(t) = ga {
                    acc(a, t);
                }
                if let Some(t) = gb {
                    acc(b, t);
                }
            }
            &Op::Conv2d { x, k, ref geo } => {
                let (gx, gk) = ops::conv2d_backward(geo, self.value(x), self.value(k), g, needs(x), needs(k));
                if let Some(t) = gx {
                    acc(x, t);
                }
                if let Some(t) = gk {
                    acc(k, t);
                }
            }
            &Op::ChannelBias { x, b } => {
                if needs(x) {
                    acc(x, g.clone());
                }
                if needs(b) {
                    let c = self.value(b).len();
                    let per = g.len() / c;
                    let sums = g.data().chunks(per).map(|ch| ch.iter().sum()).collect();
                    acc(b, Tensor::vector(sums));
                }
            }
            &Op::AvgPool { x, size } => {
                acc(x, ops::avg_pool2d_backward(self.value(x).shape(), size, g));
            }
            &Op::Reshape(x) => {
                let t = g.clone().reshape(self.value(x).shape()).expect("shape");
                acc(x, t);
            }
            &Op::Sum(x) => acc(x, Tensor::full(self.value(x).shape(), g.item())),
            &Op::Softmax(x) => {
                let y = &node.value;
                let dot: f64 = g.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
                acc(x, y.zip_map(g, |yi, gi| yi * (gi - dot)).expect("shape"));
            }
            &Op::CrossEntropy { logits, label } => {
                let x = self.value(logits);
                let mut p = Tensor::new(x.shape(), ops::softmax_slice(x.data())).expect("shape");
                p.data_mut()[label] -= 1.0;
                let gv = g.item();
                acc(logits, p.map(|v| v * gv));
            }
            &Op::L2Norm { x } => {
                let norm = node.value.item();
                let gv = g.item();
                let t = if norm == 0.0 {
                    Tensor::zeros(self.value(x).shape())
                } else {
                    self.value(x).map(|v| gv * v / norm)
                };
                acc(x, t);
            }
            &Op::SpikeFire { v, thr, width } | &Op::ClampLinear { v, thr, width } => {
                let t = self
                    .value(v)
                    .zip_map(g, |x, gv| if (x - thr).abs() <= width / 2.0 { gv / width } else { 0.0 })
                    .expect("shape");
                acc(v, t);
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&t),
        slot @ None => *slot = Some(t),
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Constant => "constant",
        Op::Param => "param",
        Op::Detach => "detach",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Affine { .. } => "affine",
        Op::MatMul(..) => "matmul",
        Op::Conv2d { .. } => "conv2d",
        Op::ChannelBias { .. } => "channel_bias",
        Op::AvgPool { .. } => "avg_pool2d",
        Op::Reshape(..) => "reshape",
        Op::Sum(..) => "sum",
        Op::Softmax(..) => "softmax",
        Op::CrossEntropy { .. } => "cross_entropy",
        Op::L2Norm { .. } => "l2_norm",
        Op::SpikeFire { .. } => "spike_fire",
        Op::ClampLinear { .. } => "clamp_linear",
    }
}
