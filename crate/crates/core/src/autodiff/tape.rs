//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Each primitive appends a node holding its forward value and the ids of
//! its inputs. Nodes are only ever appended, so insertion order is a valid
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! A tape is single-shot: one forward build, one backward call. Recurrent
//! unrolling simply keeps appending to the same tape, which makes
//! backpropagation through time fall out of the sweep.

use crate::autodiff::{Grads, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<S> {
    Constant,
    Input,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Scale(Var, S),
    AddScalar(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    MeanAxis(Var, usize),
    Concat(Vec<Var>, usize),
    Index(Var, usize),
    Clamp(Var, S, S),
    Reshape(Var),
}

#[derive(Clone, Debug)]
struct Node<S> {
    op: Op<S>,
    value: Tensor<S>,
    requires_grad: bool,
}

pub struct Tape<'p, S: Scalar> {
    params: Option<&'p ParamStore<S>>,
    param_nodes: Vec<Option<Var>>,
    nodes: Vec<Node<S>>,
    consumed: bool,
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients<S> {
    nodes: Vec<Option<Tensor<S>>>,
    params: Grads<S>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for a node, or `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<S>> {
        self.nodes[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> &Tensor<S> {
        self.params.get(id)
    }

    pub fn into_params(self) -> Grads<S> {
        self.params
    }
}

impl<S: Scalar> Default for Tape<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new() -> Self {
        Tape {
            params: None,
            param_nodes: Vec::new(),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    /// A tape that can load parameters from `store` and reports their
    /// gradients after [`Tape::backward`].
    pub fn with_params(store: &'p ParamStore<S>) -> Self {
        Tape {
            params: Some(store),
            param_nodes: vec![None; store.len()],
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op<S>, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, op: Op<S>, value: Tensor<S>) -> Result<Var> {
        value.check_finite(name)?;
        let requires_grad = self.op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(op, value, requires_grad))
    }

    fn op_inputs(&self, op: &Op<S>) -> Vec<Var> {
        match op {
            Op::Constant | Op::Input | Op::Param => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumAxis(a, _)
            | Op::MeanAxis(a, _)
            | Op::Index(a, _)
            | Op::Clamp(a, _, _)
            | Op::Reshape(a) => vec![*a],
            Op::Concat(xs, _) => xs.clone(),
        }
    }

    /// A value the loss is not differentiated against.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(Op::Constant, value, false)
    }

    /// A free leaf whose gradient is reported through [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.push(Op::Input, value, true)
    }

    /// Loads a parameter; repeated loads return the same node so gradients
    /// from every use accumulate in one place.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        let store = self
            .params
            .ok_or_else(|| Error::contract("tape has no parameter store bound"))?;
        if id.0 >= store.len() {
            return Err(Error::contract(format!("unknown parameter id {}", id.0)));
        }
        if let Some(v) = self.param_nodes[id.0] {
            return Ok(v);
        }
        let v = self.push(Op::Param, store.get(id).clone(), true);
        self.param_nodes[id.0] = Some(v);
        Ok(v)
    }

    /// Matrix product. `b` may be a vector, in which case the result is the
    /// matrix-vector product with shape `[m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = matmul_forward(av, bv)?;
        self.push_checked("matmul", Op::MatMul(a, b), out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary(self.value(a), self.value(b), "add", |x, y| x + y)?;
        self.push_checked("add", Op::Add(a, b), out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary(self.value(a), self.value(b), "sub", |x, y| x - y)?;
        self.push_checked("sub", Op::Sub(a, b), out)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = binary(self.value(a), self.value(b), "mul", |x, y| x * y)?;
        self.push_checked("mul", Op::Mul(a, b), out)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.tanh());
        self.push_checked("tanh", Op::Tanh(a), out)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push_checked("sigmoid", Op::Sigmoid(a), out)
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: Var, factor: S) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        self.push_checked("scale", Op::Scale(a, factor), out)
    }

    /// Adds a constant to every element.
    pub fn add_scalar(&mut self, a: Var, offset: S) -> Result<Var> {
        let out = self.value(a).map(|x| x + offset);
        self.push_checked("add_scalar", Op::AddScalar(a), out)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        vector_only(x, "softmax")?;
        let out = Tensor::from_parts(x.shape().to_vec(), softmax_values(x.data()));
        self.push_checked("softmax", Op::Softmax(a), out)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        vector_only(x, "log_softmax")?;
        let max = x.data().iter().fold(S::neg_infinity(), |m, &v| m.max(v));
        let lse = x
            .data()
            .iter()
            .fold(S::zero(), |acc, &v| acc + (v - max).exp())
            .ln()
            + max;
        let out = x.map(|v| v - lse);
        self.push_checked("log_softmax", Op::LogSoftmax(a), out)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::from_parts(vec![1], vec![self.value(a).sum_all()]);
        self.push_checked("sum", Op::Sum(a), out)
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let n = S::from_usize(x.len()).expect("length fits");
        let out = Tensor::from_parts(vec![1], vec![x.sum_all() / n]);
        self.push_checked("mean", Op::Mean(a), out)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = reduce_axis(self.value(a), axis, false)?;
        self.push_checked("sum_axis", Op::SumAxis(a, axis), out)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = reduce_axis(self.value(a), axis, true)?;
        self.push_checked("mean_axis", Op::MeanAxis(a, axis), out)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor<S>> = xs.iter().map(|&v| self.value(v)).collect();
        let out = concat_forward(&values, axis)?;
        self.push_checked("concat", Op::Concat(xs.to_vec(), axis), out)
    }

    /// Element at a flat row-major index, shape `[1]`.
    pub fn index(&mut self, a: Var, flat: usize) -> Result<Var> {
        let x = self.value(a);
        if flat >= x.len() {
            return Err(Error::contract(format!(
                "index {flat} out of range for shape {:?}",
                x.shape()
            )));
        }
        let out = Tensor::from_parts(vec![1], vec![x.data()[flat]]);
        self.push_checked("index", Op::Index(a, flat), out)
    }

    /// Componentwise clamp to `[lo, hi]`; the gradient is zero outside.
    pub fn clamp(&mut self, a: Var, lo: S, hi: S) -> Result<Var> {
        if lo > hi {
            return Err(Error::contract("clamp with lo > hi"));
        }
        let out = self.value(a).map(|x| x.max(lo).min(hi));
        self.push_checked("clamp", Op::Clamp(a, lo, hi), out)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        if shape.iter().product::<usize>() != x.len() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "reshape",
                lhs: x.shape().to_vec(),
                rhs: shape,
            });
        }
        let out = Tensor::from_parts(shape, x.data().to_vec());
        self.push_checked("reshape", Op::Reshape(a), out)
    }

    /// Reverse sweep from a scalar loss. The tape can be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<S>> {
        if self.consumed {
            return Err(Error::contract("backward called twice on the same tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![S::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }

        let nodes: Vec<Option<Tensor<S>>> = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| Tensor::from_parts(n.value.shape().to_vec(), g)))
            .collect();

        let params = match self.params {
            Some(store) => Grads::from_tensors(
                store
                    .ids()
                    .map(|id| match self.param_nodes[id.0] {
                        Some(v) => nodes[v.0]
                            .clone()
                            .unwrap_or_else(|| Tensor::zeros(store.get(id).shape())),
                        None => Tensor::zeros(store.get(id).shape()),
                    })
                    .collect(),
            ),
            None => Grads::from_tensors(Vec::new()),
        };
        for t in params.iter() {
            t.check_finite("backward")?;
        }
        Ok(Gradients { nodes, params })
    }

    fn propagate(&self, node: &Node<S>, g: &[S], grads: &mut [Option<Vec<S>>]) -> Result<()> {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Constant | Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if wants(*a) {
                    accumulate(grads, *a, &matmul_grad_lhs(av, bv, g), av.len());
                }
                if wants(*b) {
                    accumulate(grads, *b, &matmul_grad_rhs(av, bv, g), bv.len());
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -S::one()
                } else {
                    S::one()
                };
                if wants(*a) {
                    let n = self.value(*a).len();
                    accumulate(grads, *a, &unbroadcast(g, n), n);
                }
                if wants(*b) {
                    let n = self.value(*b).len();
                    let gb: Vec<S> = g.iter().map(|&x| x * sign).collect();
                    accumulate(grads, *b, &unbroadcast(&gb, n), n);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if wants(*a) {
                    let ga: Vec<S> = (0..g.len()).map(|i| g[i] * bcast(bv, i)).collect();
                    accumulate(grads, *a, &unbroadcast(&ga, av.len()), av.len());
                }
                if wants(*b) {
                    let gb: Vec<S> = (0..g.len()).map(|i| g[i] * bcast(av, i)).collect();
                    accumulate(grads, *b, &unbroadcast(&gb, bv.len()), bv.len());
                }
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let ga: Vec<S> = g
                    .iter()
                    .zip(y)
                    .map(|(&g, &y)| g * (S::one() - y * y))
                    .collect();
                accumulate(grads, *a, &ga, ga.len());
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let ga: Vec<S> = g
                    .iter()
                    .zip(y)
                    .map(|(&g, &y)| g * y * (S::one() - y))
                    .collect();
                accumulate(grads, *a, &ga, ga.len());
            }
            Op::Scale(a, factor) => {
                let ga: Vec<S> = g.iter().map(|&g| g * *factor).collect();
                accumulate(grads, *a, &ga, ga.len());
            }
            Op::AddScalar(a) | Op::Reshape(a) => accumulate(grads, *a, g, g.len()),
            Op::Softmax(a) => {
                let y = node.value.data();
                let dot = g.iter().zip(y).fold(S::zero(), |acc, (&g, &y)| acc + g * y);
                let ga: Vec<S> = g.iter().zip(y).map(|(&g, &y)| y * (g - dot)).collect();
                accumulate(grads, *a, &ga, ga.len());
            }
            Op::LogSoftmax(a) => {
                let p = softmax_values(self.value(*a).data());
                let total = g.iter().fold(S::zero(), |acc, &g| acc + g);
                let ga: Vec<S> = g.iter().zip(&p).map(|(&g, &p)| g - p * total).collect();
                accumulate(grads, *a, &ga, ga.len());
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                accumulate(grads, *a, &vec![g[0]; n], n);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                let share = g[0] / S::from_usize(n).expect("length fits");
                accumulate(grads, *a, &vec![share; n], n);
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let x = self.value(*a);
                let (outer, len, inner) = split_axis(x.shape(), *axis);
                let scale = if matches!(node.op, Op::MeanAxis(..)) {
                    S::one() / S::from_usize(len).expect("length fits")
                } else {
                    S::one()
                };
                let mut ga = vec![S::zero(); x.len()];
                for o in 0..outer {
                    for k in 0..len {
                        for i in 0..inner {
                            ga[(o * len + k) * inner + i] = g[o * inner + i] * scale;
                        }
                    }
                }
                accumulate(grads, *a, &ga, ga.len());
            }
            Op::Concat(xs, axis) => {
                let out_shape = node.value.shape();
                let (outer, total, inner) = split_axis(out_shape, *axis);
                let mut offset = 0;
                for &x in xs {
                    let len = self.value(x).shape()[*axis];
                    if wants(x) {
                        let mut gx = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            gx.extend_from_slice(&g[start..start + len * inner]);
                        }
                        accumulate(grads, x, &gx, gx.len());
                    }
                    offset += len;
                }
            }
            Op::Index(a, flat) => {
                let n = self.value(*a).len();
                let mut ga = vec![S::zero(); n];
                ga[*flat] = g[0];
                accumulate(grads, *a, &ga, n);
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                let ga: Vec<S> = g
                    .iter()
                    .zip(x)
                    .map(|(&g, &x)| if x >= *lo && x <= *hi { g } else { S::zero() })
                    .collect();
                accumulate(grads, *a, &ga, ga.len());
            }
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Vec<S>>], v: Var, g: &[S], len: usize) {
    debug_assert_eq!(g.len(), len);
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, &x) in existing.iter_mut().zip(g) {
                *e = *e + x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub(crate) fn softmax_values<S: Scalar>(x: &[S]) -> Vec<S> {
    let max = x.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<S> = x.iter().map(|&v| (v - max).exp()).collect();
    let total = exps.iter().fold(S::zero(), |acc, &v| acc + v);
    exps.into_iter().map(|v| v / total).collect()
}

fn vector_only<S: Scalar>(x: &Tensor<S>, op: &'static str) -> Result<()> {
    if x.ndim() == 1 {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            lhs: x.shape().to_vec(),
            rhs: vec![x.len()],
        })
    }
}

fn bcast<S: Scalar>(x: &[S], i: usize) -> S {
    if x.len() == 1 {
        x[0]
    } else {
        x[i]
    }
}

/// Folds an output-shaped gradient back onto an operand that was a
/// broadcast scalar.
fn unbroadcast<S: Scalar>(g: &[S], len: usize) -> Vec<S> {
    if len == g.len() {
        g.to_vec()
    } else {
        vec![g.iter().fold(S::zero(), |acc, &x| acc + x)]
    }
}

fn binary<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    op: &'static str,
    f: impl Fn(S, S) -> S,
) -> Result<Tensor<S>> {
    let shape = if a.shape() == b.shape() || b.len() == 1 {
        a.shape().to_vec()
    } else if a.len() == 1 {
        b.shape().to_vec()
    } else {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    };
    let n = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let data = (0..n).map(|i| f(bcast(ad, i), bcast(bd, i))).collect();
    Ok(Tensor::from_parts(shape, data))
}

fn matmul_dims<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<(usize, usize, usize)> {
    let mismatch = || Error::Shape {
        op: "matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    if a.ndim() != 2 {
        return Err(mismatch());
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (kb, n) = match b.shape() {
        [kb] => (*kb, 1),
        [kb, n] => (*kb, *n),
        _ => return Err(mismatch()),
    };
    if k != kb {
        return Err(mismatch());
    }
    Ok((m, k, n))
}

fn matmul_forward<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, k, n) = matmul_dims(a, b)?;
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![S::zero(); m * n];
    if n == 1 {
        // Observation vectors are mostly zero; skip those columns.
        let nz: Vec<usize> = (0..k).filter(|&j| bd[j] != S::zero()).collect();
        for i in 0..m {
            let row = &ad[i * k..(i + 1) * k];
            out[i] = nz.iter().fold(S::zero(), |acc, &j| acc + row[j] * bd[j]);
        }
    } else {
        for i in 0..m {
            for p in 0..k {
                let x = ad[i * k + p];
                if x == S::zero() {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o = *o + x * y;
                }
            }
        }
    }
    let shape = if b.ndim() == 1 { vec![m] } else { vec![m, n] };
    Ok(Tensor::from_parts(shape, out))
}

// dA = G · Bᵀ
fn matmul_grad_lhs<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, g: &[S]) -> Vec<S> {
    let (m, k, n) = matmul_dims(a, b).expect("validated in forward");
    let bd = b.data();
    let mut ga = vec![S::zero(); m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &bd[p * n..(p + 1) * n];
            if n == 1 {
                if brow[0] != S::zero() {
                    ga[i * k + p] = grow[0] * brow[0];
                }
            } else {
                ga[i * k + p] = grow
                    .iter()
                    .zip(brow)
                    .fold(S::zero(), |acc, (&x, &y)| acc + x * y);
            }
        }
    }
    ga
}

// dB = Aᵀ · G
fn matmul_grad_rhs<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, g: &[S]) -> Vec<S> {
    let (m, k, n) = matmul_dims(a, b).expect("validated in forward");
    let ad = a.data();
    let mut gb = vec![S::zero(); k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let x = ad[i * k + p];
            if x == S::zero() {
                continue;
            }
            let brow = &mut gb[p * n..(p + 1) * n];
            for (o, &y) in brow.iter_mut().zip(grow) {
                *o = *o + x * y;
            }
        }
    }
    gb
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduce_axis<S: Scalar>(x: &Tensor<S>, axis: usize, mean: bool) -> Result<Tensor<S>> {
    if axis >= x.ndim() {
        return Err(Error::contract(format!(
            "axis {axis} out of range for shape {:?}",
            x.shape()
        )));
    }
    let (outer, len, inner) = split_axis(x.shape(), axis);
    let d = x.data();
    let mut out = vec![S::zero(); outer * inner];
    for o in 0..outer {
        for k in 0..len {
            for i in 0..inner {
                out[o * inner + i] = out[o * inner + i] + d[(o * len + k) * inner + i];
            }
        }
    }
    if mean {
        let n = S::from_usize(len).expect("length fits");
        out.iter_mut().for_each(|v| *v = *v / n);
    }
    let mut shape: Vec<usize> = x.shape().to_vec();
    shape.remove(axis);
    if shape.is_empty() {
        shape.push(1);
    }
    Ok(Tensor::from_parts(shape, out))
}

fn concat_forward<S: Scalar>(xs: &[&Tensor<S>], axis: usize) -> Result<Tensor<S>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::contract("concat of an empty list"))?;
    if axis >= first.ndim() {
        return Err(Error::contract(format!(
            "axis {axis} out of range for shape {:?}",
            first.shape()
        )));
    }
    for x in &xs[1..] {
        let compatible = x.ndim() == first.ndim()
            && x
                .shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(Error::Shape {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: x.shape().to_vec(),
            });
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = xs.iter().map(|x| x.shape()[axis]).sum();
    let (outer, _, inner) = split_axis(&shape, axis);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for x in xs {
            let block = x.shape()[axis] * inner;
            data.extend_from_slice(&x.data()[o * block..(o + 1) * block]);
        }
    }
    Ok(Tensor::from_parts(shape, data))
}
