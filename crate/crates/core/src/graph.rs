//! Reverse-mode automatic differentiation over a tape of dense operations.
//!
//! A [`Graph`] records every operation in creation order, which is already a
//! topological order, so [`Graph::backward`] is a single reverse sweep.
//! Learnable tensors live in a [`ParamStore`] that the graph borrows; their
//! gradients come back as a [`Gradients`] value instead of being written into
//! the store, which lets several graphs over the same parameters run on
//! different threads.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Named learnable tensors, addressed by [`ParamId`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }
}

/// Per-parameter gradient buffers; parameters never touched by a backward
/// pass stay `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn new(param_count: usize) -> Self {
        Gradients {
            grads: vec![None; param_count],
        }
    }

    pub fn for_store(store: &ParamStore) -> Self {
        Self::new(store.len())
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradient of one scalar of a parameter, zero when untouched.
    pub fn at(&self, id: ParamId, index: usize) -> f64 {
        self.get(id).map_or(0.0, |g| g[index])
    }

    pub fn accumulate(&mut self, id: ParamId, values: &[f64]) {
        if id.0 >= self.grads.len() {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(buf) => {
                for (b, v) in buf.iter_mut().zip(values) {
                    *b += v;
                }
            }
            slot @ None => *slot = Some(values.to_vec()),
        }
    }

    /// Adds `other` into `self`, parameter by parameter in id order.
    pub fn merge(&mut self, other: &Gradients) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_deref().map(|g| (ParamId(i), g)))
    }

    pub fn max_abs(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the output value `y = f(x)`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Computed in max-shifted space, which keeps the small entries precise.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted_lse = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| (z - max) - shifted_lse).collect()
}

/// Checks that `p` is a probability vector: nonnegative and summing to one
/// within 1e-9.
pub fn validate_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidDistribution("empty".into()));
    }
    if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidDistribution(format!("entry {v} is negative or non-finite")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("sums to {sum}")));
    }
    Ok(())
}

/// Maps the upstream gradient and the input values to one gradient per input.
pub type BackwardFn = Box<dyn Fn(&[f64], &[&[f64]]) -> Vec<Vec<f64>> + Send + Sync>;

enum Op {
    Input,
    Param(ParamId),
    Affine {
        w: NodeId,
        x: NodeId,
        b: Option<NodeId>,
    },
    Activation(Activation, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Concat(Vec<NodeId>),
    Slice {
        x: NodeId,
        start: usize,
    },
    Mean(Vec<NodeId>),
    WeightedSum(Vec<(NodeId, f64)>),
    Row {
        table: NodeId,
        index: usize,
    },
    Mask {
        x: NodeId,
        mask: Vec<f64>,
    },
    SoftmaxNll {
        logits: NodeId,
        gold: usize,
        probs: Vec<f64>,
    },
    SquaredDistance(NodeId, NodeId),
    KlDivergence {
        logits: NodeId,
        target: Vec<f64>,
        probs: Vec<f64>,
    },
    Custom {
        inputs: Vec<NodeId>,
        backward: BackwardFn,
    },
}

struct Node {
    op: Op,
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
}

/// Tape of operations over a borrowed [`ParamStore`].
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

/// Result of a backward sweep: parameter gradients plus the gradients that
/// reached each constant input leaf.
pub struct Backprop {
    pub params: Gradients,
    inputs: Vec<Option<Vec<f64>>>,
}

impl Backprop {
    /// Gradient that reached an [`Graph::input`] leaf, if any did.
    pub fn input_grad(&self, id: NodeId) -> Option<&[f64]> {
        self.inputs.get(id.0).and_then(|g| g.as_deref())
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
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
        match (&node.value, &node.op) {
            (Some(v), _) => v,
            (None, Op::Param(p)) => self.params.get(*p),
            _ => unreachable!("node without value"),
        }
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        self.value(id).shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Some(value),
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant leaf. Its gradient is still reported by [`Backprop::input_grad`].
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Leaf for a learnable tensor; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        n
    }

    /// `W x + b` for a matrix `W[m×n]`, vector `x[n]` and optional `b[m]`.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let ws = self.shape(w).to_vec();
        let xs = self.shape(x).to_vec();
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(Error::ShapeMismatch {
                op: "affine",
                left: ws,
                right: xs,
            });
        }
        let (m, n) = (ws[0], ws[1]);
        let mut out = match b {
            Some(b) => {
                let bs = self.shape(b);
                if bs != [m] {
                    return Err(Error::ShapeMismatch {
                        op: "affine bias",
                        left: ws,
                        right: bs.to_vec(),
                    });
                }
                self.value(b).data().to_vec()
            }
            None => vec![0.0; m],
        };
        let wd = self.value(w).data();
        let xd = self.value(x).data();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &wd[i * n..(i + 1) * n];
            *o += dot(row, xd);
        }
        Ok(self.push(Op::Affine { w, x, b }, Tensor::vector(out)))
    }

    pub fn activation(&mut self, kind: Activation, x: NodeId) -> NodeId {
        let v = self.value(x);
        let shape = v.shape().to_vec();
        let data = v.data().iter().map(|&z| kind.apply(z)).collect();
        self.push(Op::Activation(kind, x), Tensor { shape, data })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.activation(Activation::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.activation(Activation::Tanh, x)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.activation(Activation::Relu, x)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor {
            shape: va.shape().to_vec(),
            data,
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(Op::Add(a, b), v))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), v))
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let v = self.value(x);
        let t = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|z| z * factor).collect(),
        };
        self.push(Op::Scale(x, factor), t)
    }

    /// Concatenation of vectors.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::EmptyInput("concat"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(data)))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        if len == 0 || start + len > v.len() {
            return Err(Error::ShapeMismatch {
                op: "slice",
                left: v.shape().to_vec(),
                right: vec![start, start + len],
            });
        }
        let t = Tensor::vector(v.data()[start..start + len].to_vec());
        Ok(self.push(Op::Slice { x, start }, t))
    }

    /// Componentwise arithmetic mean of equally shaped nodes.
    pub fn mean(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = *xs.first().ok_or(Error::EmptyDocument)?;
        let shape = self.shape(first).to_vec();
        let mut acc = vec![0.0; self.value(first).len()];
        for &x in xs {
            if self.shape(x) != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "mean",
                    left: shape,
                    right: self.shape(x).to_vec(),
                });
            }
            for (a, v) in acc.iter_mut().zip(self.value(x).data()) {
                *a += v;
            }
        }
        let n = xs.len() as f64;
        for a in acc.iter_mut() {
            *a /= n;
        }
        Ok(self.push(Op::Mean(xs.to_vec()), Tensor { shape, data: acc }))
    }

    /// `Σ wᵢ xᵢ` over equally shaped nodes.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> Result<NodeId> {
        let (first, _) = *terms.first().ok_or(Error::EmptyInput("weighted_sum"))?;
        let shape = self.shape(first).to_vec();
        let mut acc = vec![0.0; self.value(first).len()];
        for &(x, w) in terms {
            if self.shape(x) != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "weighted_sum",
                    left: shape,
                    right: self.shape(x).to_vec(),
                });
            }
            for (a, v) in acc.iter_mut().zip(self.value(x).data()) {
                *a += w * v;
            }
        }
        Ok(self.push(Op::WeightedSum(terms.to_vec()), Tensor { shape, data: acc }))
    }

    /// Row `index` of a matrix node, e.g. a character embedding lookup.
    pub fn row(&mut self, table: NodeId, index: usize) -> Result<NodeId> {
        let t = self.value(table);
        if t.shape().len() != 2 || index >= t.rows() {
            return Err(Error::ShapeMismatch {
                op: "row",
                left: t.shape().to_vec(),
                right: vec![index],
            });
        }
        let r = Tensor::vector(t.row(index).to_vec());
        Ok(self.push(Op::Row { table, index }, r))
    }

    /// Multiplies `x` elementwise by a constant mask.
    pub fn mask(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let v = self.value(x);
        if v.len() != mask.len() {
            return Err(Error::ShapeMismatch {
                op: "mask",
                left: v.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let t = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().zip(&mask).map(|(a, m)| a * m).collect(),
        };
        Ok(self.push(Op::Mask { x, mask }, t))
    }

    /// Inverted dropout: zeroes each unit with probability `rate` and scales
    /// survivors by `1 / (1 - rate)`. A zero rate draws nothing from `rng`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, rate: f64, rng: &mut R) -> Result<NodeId> {
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let mask = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.mask(x, mask)
    }

    /// `-log softmax(logits)[gold]`.
    pub fn softmax_nll(&mut self, logits: NodeId, gold: usize) -> Result<NodeId> {
        let z = self.value(logits).data();
        if gold >= z.len() {
            return Err(Error::LabelOutOfRange {
                index: gold,
                count: z.len(),
            });
        }
        let loss = -log_softmax(z)[gold];
        let probs = softmax(z);
        Ok(self.push(Op::SoftmaxNll { logits, gold, probs }, Tensor::scalar(loss)))
    }

    /// `‖a − b‖²`.
    pub fn squared_distance(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("squared_distance", a, b)?;
        let d: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Op::SquaredDistance(a, b), Tensor::scalar(d)))
    }

    /// `KL(target ‖ softmax(logits))`; `target` is a constant distribution.
    pub fn kl_divergence(&mut self, target: &[f64], logits: NodeId) -> Result<NodeId> {
        validate_distribution(target)?;
        let z = self.value(logits).data();
        if z.len() != target.len() {
            return Err(Error::ShapeMismatch {
                op: "kl_divergence",
                left: vec![target.len()],
                right: vec![z.len()],
            });
        }
        let log_q = log_softmax(z);
        let kl = target
            .iter()
            .zip(&log_q)
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, lq)| p * (p.ln() - lq))
            .sum::<f64>();
        let probs = softmax(z);
        Ok(self.push(
            Op::KlDivergence {
                logits,
                target: target.to_vec(),
                probs,
            },
            Tensor::scalar(kl),
        ))
    }

    /// Operation with a caller-supplied forward value and backward rule.
    pub fn custom(&mut self, inputs: &[NodeId], value: Tensor, backward: BackwardFn) -> NodeId {
        self.push(
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
            value,
        )
    }

    /// Backpropagates from a scalar root.
    pub fn backward(&self, root: NodeId) -> Result<Backprop> {
        let v = self.value(root);
        if !v.is_scalar() {
            return Err(Error::NonScalarRoot(v.shape().to_vec()));
        }
        self.backward_from(root, &[1.0])
    }

    /// Backpropagates an explicit upstream gradient `seed` from any node.
    pub fn backward_from(&self, root: NodeId, seed: &[f64]) -> Result<Backprop> {
        let rv = self.value(root);
        if seed.len() != rv.len() {
            return Err(Error::ShapeMismatch {
                op: "backward seed",
                left: rv.shape().to_vec(),
                right: vec![seed.len()],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(seed.to_vec());
        let mut params = Gradients::new(self.params.len());

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Input) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Input => {}
                Op::Param(p) => params.accumulate(*p, &g),
                Op::Affine { w, x, b } => {
                    let wv = self.value(*w);
                    let xv = self.value(*x).data();
                    let n = xv.len();
                    {
                        let gw = self.grad_buf(&mut grads, *w);
                        for (r, gi) in g.iter().enumerate() {
                            if *gi == 0.0 {
                                continue;
                            }
                            axpy(*gi, xv, &mut gw[r * n..(r + 1) * n]);
                        }
                    }
                    {
                        let wd = wv.data();
                        let gx = self.grad_buf(&mut grads, *x);
                        for (r, gi) in g.iter().enumerate() {
                            if *gi == 0.0 {
                                continue;
                            }
                            axpy(*gi, &wd[r * n..(r + 1) * n], gx);
                        }
                    }
                    if let Some(b) = b {
                        axpy(1.0, &g, self.grad_buf(&mut grads, *b));
                    }
                }
                Op::Activation(kind, x) => {
                    let y = node.value.as_ref().expect("activation value").data();
                    let gx = self.grad_buf(&mut grads, *x);
                    for ((gx, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *gx += gi * kind.derivative_from_output(*yi);
                    }
                }
                Op::Add(a, b) => {
                    axpy(1.0, &g, self.grad_buf(&mut grads, *a));
                    axpy(1.0, &g, self.grad_buf(&mut grads, *b));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let ga = self.grad_buf(&mut grads, *a);
                    for ((ga, gi), bi) in ga.iter_mut().zip(&g).zip(bv) {
                        *ga += gi * bi;
                    }
                    let gb = self.grad_buf(&mut grads, *b);
                    for ((gb, gi), ai) in gb.iter_mut().zip(&g).zip(av) {
                        *gb += gi * ai;
                    }
                }
                Op::Scale(x, f) => axpy(*f, &g, self.grad_buf(&mut grads, *x)),
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        axpy(1.0, &g[off..off + len], self.grad_buf(&mut grads, p));
                        off += len;
                    }
                }
                Op::Slice { x, start } => {
                    let gx = self.grad_buf(&mut grads, *x);
                    axpy(1.0, &g, &mut gx[*start..*start + g.len()]);
                }
                Op::Mean(xs) => {
                    let inv = 1.0 / xs.len() as f64;
                    for &x in xs {
                        axpy(inv, &g, self.grad_buf(&mut grads, x));
                    }
                }
                Op::WeightedSum(terms) => {
                    for &(x, w) in terms {
                        axpy(w, &g, self.grad_buf(&mut grads, x));
                    }
                }
                Op::Row { table, index } => {
                    let c = g.len();
                    let gt = self.grad_buf(&mut grads, *table);
                    axpy(1.0, &g, &mut gt[index * c..(index + 1) * c]);
                }
                Op::Mask { x, mask } => {
                    let gx = self.grad_buf(&mut grads, *x);
                    for ((gx, gi), m) in gx.iter_mut().zip(&g).zip(mask) {
                        *gx += gi * m;
                    }
                }
                Op::SoftmaxNll { logits, gold, probs } => {
                    let s = g[0];
                    let gl = self.grad_buf(&mut grads, *logits);
                    for (j, (gl, p)) in gl.iter_mut().zip(probs).enumerate() {
                        let onehot = if j == *gold { 1.0 } else { 0.0 };
                        *gl += s * (p - onehot);
                    }
                }
                Op::SquaredDistance(a, b) => {
                    let s = g[0];
                    let diff: Vec<f64> = self
                        .value(*a)
                        .data()
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(x, y)| 2.0 * s * (x - y))
                        .collect();
                    axpy(1.0, &diff, self.grad_buf(&mut grads, *a));
                    axpy(-1.0, &diff, self.grad_buf(&mut grads, *b));
                }
                Op::KlDivergence { logits, target, probs } => {
                    let s = g[0];
                    let gl = self.grad_buf(&mut grads, *logits);
                    for ((gl, q), p) in gl.iter_mut().zip(probs).zip(target) {
                        *gl += s * (q - p);
                    }
                }
                Op::Custom { inputs, backward } => {
                    let vals: Vec<&[f64]> = inputs.iter().map(|&x| self.value(x).data()).collect();
                    let contributions = backward(&g, &vals);
                    for (&x, c) in inputs.iter().zip(&contributions) {
                        axpy(1.0, c, self.grad_buf(&mut grads, x));
                    }
                }
            }
        }

        let inputs = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| match self.nodes[i].op {
                Op::Input => g,
                _ => None,
            })
            .collect();
        Ok(Backprop { params, inputs })
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], id: NodeId) -> &'g mut Vec<f64> {
        let len = self.value(id).len();
        grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
