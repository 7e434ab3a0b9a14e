//! Flat registry of trainable parameters.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Set once a backward pass has accumulated into this parameter.
    pub grad_seen: bool,
}

/// Flat registry of trainable tensors with gradient buffers.
///
/// A store is owned by one network; backward passes accumulate into the
/// gradients until [`ParameterStore::zero_grads`] resets them.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, mut value: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::Consistency(format!(
                "duplicate parameter name {name:?}"
            )));
        }
        value.enable_grad();
        let id = ParamId(self.params.len());
        self.by_name.insert(name.to_string(), id.0);
        self.params.push(Param {
            name: name.to_string(),
            value,
            grad_seen: false,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar elements across all parameters.
    pub fn total_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.value.zero_grad();
            p.grad_seen = false;
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[f64]) -> Result<()> {
        let p = &mut self.params[id.0];
        let g = p
            .value
            .grad
            .as_mut()
            .ok_or_else(|| Error::Consistency(format!("parameter {} has no grad", p.name)))?;
        if g.len() != grad.len() {
            return Err(Error::Shape(format!(
                "gradient length {} does not match parameter {} ({})",
                grad.len(),
                p.name,
                g.len()
            )));
        }
        for (a, b) in g.iter_mut().zip(grad.iter()) {
            *a += b;
        }
        p.grad_seen = true;
        Ok(())
    }

    /// Record that a backward pass populated this parameter's gradient,
    /// even when the accumulated value is structurally zero.
    pub fn mark_grad_seen(&mut self, id: ParamId) {
        self.params[id.0].grad_seen = true;
    }

    /// Scale every gradient by `s` (used for batch averaging).
    pub fn scale_grads(&mut self, s: f64) {
        for p in &mut self.params {
            if let Some(g) = &mut p.value.grad {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    pub fn grad_global_norm(&self) -> f64 {
        let mut acc = 0.0;
        for p in &self.params {
            if let Some(g) = &p.value.grad {
                acc += g.iter().map(|v| v * v).sum::<f64>();
            }
        }
        acc.sqrt()
    }

    /// Clip all gradients to a maximum global L2 norm.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale_grads(max_norm / norm);
        }
    }

    /// Overwrite the value of a named parameter (shape must match).
    pub fn set_value(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let id = self
            .id_of(name)
            .ok_or_else(|| Error::Consistency(format!("no parameter named {name:?}")))?;
        let p = &mut self.params[id.0];
        if p.value.len() != data.len() {
            return Err(Error::Shape(format!(
                "cannot set {name:?}: length {} vs {}",
                data.len(),
                p.value.len()
            )));
        }
        p.value.data.copy_from_slice(data);
        Ok(())
    }

    pub fn set_scalar(&mut self, name: &str, value: f64) -> Result<()> {
        self.set_value(name, &[value])
    }
}
