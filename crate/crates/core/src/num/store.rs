use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::num::scalar::Scalar;
use crate::num::tensor::Tensor;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
struct Entry<S> {
    value: Tensor<S>,
    grad: Tensor<S>,
    m1: Tensor<S>,
    m2: Tensor<S>,
}

/// Named parameter tensors with per-parameter gradient accumulators and Adam
/// moment buffers. Gradient and moment tensors always match their parameter's
/// shape; the step counter is monotone.
#[derive(Clone, Debug)]
pub struct ParameterStore<S: Scalar> {
    entries: BTreeMap<String, Entry<S>>,
    step: u64,
}

impl<S: Scalar> Default for ParameterStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParameterStore<S> {
    pub fn new() -> Self {
        ParameterStore {
            entries: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::invalid(format!("parameter `{name}` already exists")));
        }
        let grad = Tensor::zeros_like(&value);
        let m1 = Tensor::zeros_like(&value);
        let m2 = Tensor::zeros_like(&value);
        self.entries.insert(
            name.to_string(),
            Entry {
                value,
                grad,
                m1,
                m2,
            },
        );
        Ok(())
    }

    fn entry(&self, name: &str) -> Result<&Entry<S>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>> {
        Ok(&self.entry(name)?.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Replace a parameter's value; the shape must stay fixed.
    pub fn set_value(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))?;
        if entry.value.shape() != value.shape() {
            return Err(Error::invalid(format!(
                "parameter `{name}` shape {:?} cannot become {:?}",
                entry.value.shape(),
                value.shape()
            )));
        }
        entry.value = value;
        Ok(())
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<S>> {
        Ok(&self.entry(name)?.grad)
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &Tensor<S>) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{name}`")))?;
        if entry.grad.shape() != g.shape() {
            return Err(Error::invalid(format!(
                "gradient shape {:?} does not match parameter `{name}` {:?}",
                g.shape(),
                entry.grad.shape()
            )));
        }
        entry.grad.add_assign(g);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            for g in entry.grad.values_mut() {
                *g = S::zero();
            }
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    /// One Adam update over every parameter. Gradients are zeroed afterwards
    /// and the step counter is incremented.
    pub fn adam_step(&mut self, lr: S) {
        let t = self.step + 1;
        let b1 = S::of(BETA1);
        let b2 = S::of(BETA2);
        let eps = S::of(EPS);
        let bias1 = S::one() - b1.powi(t as i32);
        let bias2 = S::one() - b2.powi(t as i32);
        for entry in self.entries.values_mut() {
            for i in 0..entry.value.len() {
                let g = entry.grad.values()[i];
                let m1 = b1 * entry.m1.values()[i] + (S::one() - b1) * g;
                let m2 = b2 * entry.m2.values()[i] + (S::one() - b2) * g * g;
                entry.m1.values_mut()[i] = m1;
                entry.m2.values_mut()[i] = m2;
                let mhat = m1 / bias1;
                let vhat = m2 / bias2;
                entry.value.values_mut()[i] =
                    entry.value.values()[i] - lr * mhat / (vhat.sqrt() + eps);
                entry.grad.values_mut()[i] = S::zero();
            }
        }
        self.step = t;
    }
}
