use std::collections::HashMap;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named learnable tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
    index: HashMap<String, ParamId>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("parameter `{name}` registered twice")));
        }
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    /// Replaces the value of a parameter, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        self.tensors[id.0].same_shape(&value, "set_param")?;
        self.tensors[id.0] = value;
        Ok(())
    }

    /// Writes a single scalar; used by finite-difference checks.
    pub fn set_element(&mut self, id: ParamId, index: usize, value: S) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "set_element" });
        }
        let t = &mut self.tensors[id.0];
        if index >= t.len() {
            return Err(Error::contract(format!(
                "element {index} out of range for `{}`",
                self.names[id.0]
            )));
        }
        t.data_mut()[index] = value;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Gradient table aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<S> {
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Grads<S> {
    pub fn zeros_like(store: &ParamStore<S>) -> Self {
        Grads {
            tensors: store.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub(crate) fn from_tensors(tensors: Vec<Tensor<S>>) -> Self {
        Grads { tensors }
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor<S>> {
        self.tensors.iter()
    }

    pub fn add_assign(&mut self, other: &Grads<S>) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::contract("gradient tables have different key sets"));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.same_shape(b, "grad_add")?;
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = *x + y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: S) {
        for t in &mut self.tensors {
            for x in t.data_mut() {
                *x = *x * factor;
            }
        }
    }

    pub fn global_norm(&self) -> S {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter())
            .fold(S::zero(), |acc, &v| acc + v * v)
            .sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: S) -> S {
        let norm = self.global_norm();
        if norm > max_norm && norm > S::zero() {
            self.scale(max_norm / norm);
        }
        norm
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Ascent,
    Descent,
}

/// Plain gradient step: θ ← θ ± λ·g.
pub fn sgd_step<S: Scalar>(
    params: &mut ParamStore<S>,
    grads: &Grads<S>,
    learning_rate: S,
    direction: Direction,
) -> Result<()> {
    if params.tensors.len() != grads.tensors.len() {
        return Err(Error::contract(format!(
            "sgd_step: {} parameters but {} gradients",
            params.tensors.len(),
            grads.tensors.len()
        )));
    }
    for (p, g) in params.tensors.iter().zip(&grads.tensors) {
        p.same_shape(g, "sgd_step")?;
    }
    let step = match direction {
        Direction::Ascent => learning_rate,
        Direction::Descent => -learning_rate,
    };
    for (p, g) in params.tensors.iter_mut().zip(&grads.tensors) {
        for (x, &d) in p.data_mut().iter_mut().zip(g.data()) {
            *x = *x + step * d;
        }
        p.check_finite("sgd_step")?;
    }
    Ok(())
}
