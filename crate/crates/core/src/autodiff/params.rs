use std::collections::HashMap;

use rand::Rng;

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to an entry of a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    value: Tensor,
    grad: Tensor,
    first_moment: Tensor,
    second_moment: Tensor,
    trainable: bool,
}

/// Named tensors with gradient accumulators and Adam moment slots.
///
/// Entries keep insertion order, which fixes checkpoint layout and the order
/// of every reduction over parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter. Panics on a duplicate name, which is a construction bug.
    pub fn add(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter name {name}");
        let (r, c) = value.shape();
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            grad: Tensor::zeros(r, c),
            first_moment: Tensor::zeros(r, c),
            second_moment: Tensor::zeros(r, c),
            trainable,
        });
        let id = self.entries.len() - 1;
        self.by_name.insert(name.to_string(), id);
        ParamId(id)
    }

    /// Adds a trainable `rows × cols` matrix drawn from the Glorot uniform
    /// range `±sqrt(6 / (rows + cols))`.
    pub fn add_glorot<R: Rng + ?Sized>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
        self.add(name, Tensor::from_vec(rows, cols, data).expect("sized"), true)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    /// Replaces a value, keeping the shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {}: {:?} vs {:?}",
                e.name,
                e.value.shape(),
                value.shape()
            )));
        }
        e.value = value;
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.value.len()).sum()
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        let e = &mut self.entries[id.0];
        if !e.trainable {
            return;
        }
        debug_assert_eq!(e.grad.shape(), g.shape());
        for (acc, v) in e.grad.data_mut().iter_mut().zip(g.data()) {
            *acc += v;
        }
    }

    pub fn zero_grad(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Multiplies every gradient by `factor`.
    pub fn scale_grad(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.grad.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Euclidean norm over all trainable gradients.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.grad.squared_norm())
            .sum::<f64>()
            .sqrt()
    }

    /// One Adam update with bias correction; `step` starts at 1.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64, step: u64) {
        let c1 = 1.0 - beta1.powi(step as i32);
        let c2 = 1.0 - beta2.powi(step as i32);
        for e in self.entries.iter_mut().filter(|e| e.trainable) {
            let grad = e.grad.data();
            let m = e.first_moment.data_mut();
            for (mi, g) in m.iter_mut().zip(grad) {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
            }
            let v = e.second_moment.data_mut();
            for (vi, g) in v.iter_mut().zip(grad) {
                *vi = beta2 * *vi + (1.0 - beta2) * g * g;
            }
            let (m, v) = (e.first_moment.data(), e.second_moment.data());
            for ((p, mi), vi) in e.value.data_mut().iter_mut().zip(m).zip(v) {
                let mhat = mi / c1;
                let vhat = vi / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }

    /// Copies every value from `other`, matched by name and shape.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for e in &mut self.entries {
            let Some(&j) = other.by_name.get(&e.name) else {
                return Err(Error::Checkpoint(format!("missing parameter {}", e.name)));
            };
            let src = &other.entries[j].value;
            if src.shape() != e.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    e.name,
                    src.shape(),
                    e.value.shape()
                )));
            }
            e.value = src.clone();
        }
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, model expects {}",
                other.len(),
                self.len()
            )));
        }
        Ok(())
    }

    /// True when names, shapes and values agree bit for bit.
    pub fn values_equal(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.value == b.value)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn glorot_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ParamStore::new();
        let id = p.add_glorot("w", 10, 6, &mut rng);
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(p.value(id).data().iter().all(|v| v.abs() <= bound));
        assert_eq!(p.grad(id).shape(), (10, 6));
    }

    #[test]
    fn adam_with_zero_grad_is_identity() {
        let mut p = ParamStore::new();
        let id = p.add("w", Tensor::row_vector(&[1.0, -2.0]), true);
        let before = p.clone();
        p.adam_step(0.1, 0.9, 0.999, 1e-8, 1);
        assert_eq!(p.value(id), before.value(id));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ParamStore::new();
        let id = p.add("w", Tensor::row_vector(&[1.0, -2.0]), true);
        p.accumulate_grad(id, &Tensor::row_vector(&[3.0, -0.5]));
        p.adam_step(0.01, 0.9, 0.999, 1e-8, 1);
        let v = p.value(id).data();
        assert!((v[0] - 0.99).abs() < 1e-9);
        assert!((v[1] + 1.99).abs() < 1e-9);
    }
}
