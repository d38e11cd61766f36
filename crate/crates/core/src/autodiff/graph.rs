//! Expression graph nodes and the backward pass.

use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use thiserror::Error;

use crate::array::{Array, ArrayError};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("matmul shapes incompatible: {lhs:?} x {rhs:?}")]
    MatmulShape { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("elementwise operands differ in shape: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("log of non-positive value {value} at flat index {index}")]
    LogDomain { index: usize, value: f64 },
    #[error("backward root must be scalar-shaped ([1] or []), got {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("row slice {from}..{to} out of bounds for {rows} rows")]
    SliceBounds { from: usize, to: usize, rows: usize },
    #[error("cannot reshape {from:?} ({from_len} elements) to {to:?} ({to_len} elements)")]
    ReshapeLength {
        from: Vec<usize>,
        from_len: usize,
        to: Vec<usize>,
        to_len: usize,
    },
    #[error(transparent)]
    Array(#[from] ArrayError),
}

enum Op<S: Scalar> {
    Leaf,
    Add(Node<S>, Node<S>),
    Sub(Node<S>, Node<S>),
    Mul(Node<S>, Node<S>),
    Matmul(Node<S>, Node<S>),
    Tanh(Node<S>),
    Relu(Node<S>),
    Log(Node<S>),
    /// value * factor
    Scale(Node<S>, S),
    /// value + offset (scalar broadcast)
    Shift(Node<S>, S),
    /// full reduction to shape [1]
    Sum(Node<S>),
    /// rows `from..to` of a 2-D value
    SliceRows(Node<S>, usize, usize),
    Reshape(Node<S>),
}

struct Inner<S: Scalar> {
    value: RefCell<Array<S>>,
    grad: RefCell<Array<S>>,
    op: Op<S>,
    requires_grad: bool,
}

/// Shared handle to a graph node. Cloning is cheap and aliases the node.
pub struct Node<S: Scalar>(Rc<Inner<S>>);

impl<S: Scalar> Clone for Node<S> {
    fn clone(&self) -> Self {
        Node(Rc::clone(&self.0))
    }
}

impl<S: Scalar> std::fmt::Debug for Node<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Node")
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl<S: Scalar> Node<S> {
    fn new(value: Array<S>, op: Op<S>, requires_grad: bool) -> Self {
        let grad = Array::zeros(value.shape().to_vec());
        Node(Rc::new(Inner {
            value: RefCell::new(value),
            grad: RefCell::new(grad),
            op,
            requires_grad,
        }))
    }

    /// Leaf that participates in differentiation (a parameter).
    pub fn parameter(value: Array<S>) -> Self {
        Self::new(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant: gradients are not propagated into it.
    pub fn constant(value: Array<S>) -> Self {
        Self::new(value, Op::Leaf, false)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.borrow().shape().to_vec()
    }

    pub fn value(&self) -> Ref<'_, Array<S>> {
        self.0.value.borrow()
    }

    /// Scalar value of a single-element node.
    pub fn item(&self) -> S {
        self.0.value.borrow().item()
    }

    pub fn grad(&self) -> Ref<'_, Array<S>> {
        self.0.grad.borrow()
    }

    /// Replace a leaf's value in place. Downstream nodes of an existing
    /// graph are not recomputed; rebuild the graph after updating leaves.
    pub fn set_value(&self, value: Array<S>) {
        assert_eq!(
            self.shape(),
            value.shape(),
            "set_value must preserve the shape"
        );
        *self.0.value.borrow_mut() = value;
    }

    /// Add `delta` to one element of a leaf value (finite-difference probes).
    pub fn nudge(&self, flat_index: usize, delta: S) {
        let mut v = self.0.value.borrow_mut();
        v.data_mut()[flat_index] = v.data()[flat_index] + delta;
    }

    pub fn zero_grad(&self) {
        self.0.grad.borrow_mut().fill(S::zero());
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    fn parents(&self) -> Vec<Node<S>> {
        match &self.0.op {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => {
                vec![a.clone(), b.clone()]
            }
            Op::Tanh(a)
            | Op::Relu(a)
            | Op::Log(a)
            | Op::Scale(a, _)
            | Op::Shift(a, _)
            | Op::Sum(a)
            | Op::SliceRows(a, _, _)
            | Op::Reshape(a) => vec![a.clone()],
        }
    }

    // ---- elementwise ops ----

    fn same_shape(&self, other: &Node<S>) -> Result<(), GraphError> {
        if self.shape() != other.shape() {
            return Err(GraphError::ShapeMismatch {
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Node<S>) -> Result<Node<S>, GraphError> {
        self.same_shape(other)?;
        let data = self
            .value()
            .iter()
            .zip(other.value().iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Node::new(
            Array::from_raw(self.shape(), data),
            Op::Add(self.clone(), other.clone()),
            true,
        ))
    }

    pub fn sub(&self, other: &Node<S>) -> Result<Node<S>, GraphError> {
        self.same_shape(other)?;
        let data = self
            .value()
            .iter()
            .zip(other.value().iter())
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Node::new(
            Array::from_raw(self.shape(), data),
            Op::Sub(self.clone(), other.clone()),
            true,
        ))
    }

    pub fn mul(&self, other: &Node<S>) -> Result<Node<S>, GraphError> {
        self.same_shape(other)?;
        let data = self
            .value()
            .iter()
            .zip(other.value().iter())
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Node::new(
            Array::from_raw(self.shape(), data),
            Op::Mul(self.clone(), other.clone()),
            true,
        ))
    }

    pub fn tanh(&self) -> Node<S> {
        let data = self.value().iter().map(|&a| a.tanh()).collect();
        Node::new(
            Array::from_raw(self.shape(), data),
            Op::Tanh(self.clone()),
            true,
        )
    }

    /// Rectifier; the subgradient at exactly 0 is taken to be 0.
    pub fn relu(&self) -> Node<S> {
        let data = self
            .value()
            .iter()
            .map(|&a| if a > S::zero() { a } else { S::zero() })
            .collect();
        Node::new(
            Array::from_raw(self.shape(), data),
            Op::Relu(self.clone()),
            true,
        )
    }

    pub fn log(&self) -> Result<Node<S>, GraphError> {
        if let Some((index, &value)) = self
            .value()
            .iter()
            .enumerate()
            .find(|(_, &v)| v <= S::zero())
        {
            return Err(GraphError::LogDomain {
                index,
                value: value.to_f64().unwrap_or(f64::NAN),
            });
        }
        let data = self.value().iter().map(|&a| a.ln()).collect();
        Ok(Node::new(
            Array::from_raw(self.shape(), data),
            Op::Log(self.clone()),
            true,
        ))
    }

    pub fn scale(&self, factor: S) -> Node<S> {
        let data = self.value().iter().map(|&a| a * factor).collect();
        Node::new(
            Array::from_raw(self.shape(), data),
            Op::Scale(self.clone(), factor),
            true,
        )
    }

    pub fn shift(&self, offset: S) -> Node<S> {
        let data = self.value().iter().map(|&a| a + offset).collect();
        Node::new(
            Array::from_raw(self.shape(), data),
            Op::Shift(self.clone(), offset),
            true,
        )
    }

    // ---- structural ops ----

    pub fn matmul(&self, other: &Node<S>) -> Result<Node<S>, GraphError> {
        let (ls, rs) = (self.shape(), other.shape());
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(GraphError::MatmulShape { lhs: ls, rhs: rs });
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        let a = self.value();
        let b = other.value();
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = a.data()[i * k + p];
                let brow = &b.data()[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o = *o + aip * bv;
                }
            }
        }
        drop(a);
        drop(b);
        Ok(Node::new(
            Array::from_raw(vec![m, n], out),
            Op::Matmul(self.clone(), other.clone()),
            true,
        ))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Node<S> {
        let total = self.value().iter().fold(S::zero(), |acc, &v| acc + v);
        Node::new(
            Array::from_raw(vec![1], vec![total]),
            Op::Sum(self.clone()),
            true,
        )
    }

    /// Rows `from..to` (half-open) of a 2-D node.
    pub fn slice_rows(&self, from: usize, to: usize) -> Result<Node<S>, GraphError> {
        let shape = self.shape();
        assert_eq!(shape.len(), 2, "slice_rows requires a 2-D node");
        let (rows, cols) = (shape[0], shape[1]);
        if from >= to || to > rows {
            return Err(GraphError::SliceBounds { from, to, rows });
        }
        let data = self.value().data()[from * cols..to * cols].to_vec();
        Ok(Node::new(
            Array::from_raw(vec![to - from, cols], data),
            Op::SliceRows(self.clone(), from, to),
            true,
        ))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Node<S>, GraphError> {
        let to_len: usize = shape.iter().product();
        let from = self.shape();
        let from_len = self.value().len();
        if to_len != from_len {
            return Err(GraphError::ReshapeLength {
                from,
                from_len,
                to: shape,
                to_len,
            });
        }
        let data = self.value().data().to_vec();
        Ok(Node::new(
            Array::from_raw(shape, data),
            Op::Reshape(self.clone()),
            true,
        ))
    }

    // ---- backward ----

    /// Accumulate `d root / d ancestor` into every ancestor's gradient.
    ///
    /// The root must be scalar-shaped. Each node is visited exactly once,
    /// in reverse topological order. The pass propagates through a local
    /// buffer and adds its result into the stored gradients at the end, so
    /// calling twice without zeroing doubles them instead of compounding
    /// through stale intermediate values.
    pub fn backward(&self) -> Result<(), GraphError> {
        if !self.value().is_scalar_shaped() {
            return Err(GraphError::NonScalarRoot {
                shape: self.shape(),
            });
        }

        // Iterative post-order DFS; order is fixed by graph structure.
        let mut topo: Vec<Node<S>> = Vec::new();
        let mut position: HashMap<usize, usize> = HashMap::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Node<S>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                position.insert(node.key(), topo.len());
                topo.push(node);
                continue;
            }
            if !visited.insert(node.key()) {
                continue;
            }
            let parents = node.parents();
            stack.push((node, true));
            for p in parents {
                if !visited.contains(&p.key()) {
                    stack.push((p, false));
                }
            }
        }

        let mut flow: Vec<Vec<S>> = topo
            .iter()
            .map(|n| vec![S::zero(); n.value().len()])
            .collect();
        let root_pos = position[&self.key()];
        flow[root_pos].iter_mut().for_each(|v| *v = S::one());

        for idx in (0..topo.len()).rev() {
            let node = topo[idx].clone();
            let out = std::mem::take(&mut flow[idx]);
            node.propagate(&out, &position, &mut flow);
            flow[idx] = out;
        }

        for (node, local) in topo.iter().zip(&flow) {
            let mut g = node.0.grad.borrow_mut();
            for (t, &c) in g.data_mut().iter_mut().zip(local) {
                *t = *t + c;
            }
        }
        Ok(())
    }

    fn propagate(&self, out: &[S], position: &HashMap<usize, usize>, flow: &mut [Vec<S>]) {
        let mut send = |target: &Node<S>, f: &mut dyn FnMut(&mut [S])| {
            let idx = position[&target.key()];
            f(&mut flow[idx]);
        };
        match &self.0.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(a, &mut |g| add_slice(g, out, |v| v));
                send(b, &mut |g| add_slice(g, out, |v| v));
            }
            Op::Sub(a, b) => {
                send(a, &mut |g| add_slice(g, out, |v| v));
                send(b, &mut |g| add_slice(g, out, |v| -v));
            }
            Op::Mul(a, b) => {
                let av = a.value().data().to_vec();
                let bv = b.value().data().to_vec();
                send(a, &mut |g| add_slice_with(g, out, &bv, |v, o| v * o));
                send(b, &mut |g| add_slice_with(g, out, &av, |v, o| v * o));
            }
            Op::Matmul(a, b) => {
                let (m, k) = {
                    let s = a.shape();
                    (s[0], s[1])
                };
                let n = b.shape()[1];
                let av = a.value().data().to_vec();
                let bv = b.value().data().to_vec();
                if a.0.requires_grad || !matches!(a.0.op, Op::Leaf) {
                    // dA = G . B^T
                    send(a, &mut |da| {
                        for i in 0..m {
                            for j in 0..n {
                                let gij = out[i * n + j];
                                for p in 0..k {
                                    da[i * k + p] = da[i * k + p] + gij * bv[p * n + j];
                                }
                            }
                        }
                    });
                }
                if b.0.requires_grad || !matches!(b.0.op, Op::Leaf) {
                    // dB = A^T . G
                    send(b, &mut |db| {
                        for i in 0..m {
                            for p in 0..k {
                                let aip = av[i * k + p];
                                for j in 0..n {
                                    db[p * n + j] = db[p * n + j] + aip * out[i * n + j];
                                }
                            }
                        }
                    });
                }
            }
            Op::Tanh(a) => {
                let y = self.0.value.borrow().data().to_vec();
                send(a, &mut |g| {
                    add_slice_with(g, out, &y, |v, t| v * (S::one() - t * t))
                });
            }
            Op::Relu(a) => {
                let x = a.value().data().to_vec();
                send(a, &mut |g| {
                    add_slice_with(g, out, &x, |v, x| if x > S::zero() { v } else { S::zero() })
                });
            }
            Op::Log(a) => {
                let x = a.value().data().to_vec();
                send(a, &mut |g| add_slice_with(g, out, &x, |v, x| v / x));
            }
            Op::Scale(a, factor) => {
                let f = *factor;
                send(a, &mut |g| add_slice(g, out, |v| v * f));
            }
            Op::Shift(a, _) => {
                send(a, &mut |g| add_slice(g, out, |v| v));
            }
            Op::Sum(a) => {
                let g0 = out[0];
                send(a, &mut |g| g.iter_mut().for_each(|v| *v = *v + g0));
            }
            Op::SliceRows(a, from, _to) => {
                let cols = a.shape()[1];
                let base = from * cols;
                send(a, &mut |g| {
                    for (i, &v) in out.iter().enumerate() {
                        g[base + i] = g[base + i] + v;
                    }
                });
            }
            Op::Reshape(a) => {
                send(a, &mut |g| add_slice(g, out, |v| v));
            }
        }
    }
}

fn add_slice<S: Scalar>(target: &mut [S], out: &[S], f: impl Fn(S) -> S) {
    for (t, &v) in target.iter_mut().zip(out) {
        *t = *t + f(v);
    }
}

fn add_slice_with<S: Scalar>(target: &mut [S], out: &[S], aux: &[S], f: impl Fn(S, S) -> S) {
    for ((t, &v), &x) in target.iter_mut().zip(out).zip(aux) {
        *t = *t + f(v, x);
    }
}
