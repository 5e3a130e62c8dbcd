use std::collections::BTreeMap;

use crate::{DenseArray, NnError, Real, Result};

pub type GradMap<T> = BTreeMap<String, DenseArray<T>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 7e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Slot<T> {
    value: DenseArray<T>,
    m: DenseArray<T>,
    v: DenseArray<T>,
}

/// Named parameters with their Adam moments, ordered by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<T> {
    slots: BTreeMap<String, Slot<T>>,
    step: u64,
}

impl<T: Real> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            slots: BTreeMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseArray<T>) -> Result<()> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(NnError::DuplicateParameter(name));
        }
        let m = DenseArray::zeros(value.shape());
        let v = DenseArray::zeros(value.shape());
        self.slots.insert(name, Slot { value, m, v });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&DenseArray<T>> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseArray<T>)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    pub fn first_moment(&self, name: &str) -> Option<&DenseArray<T>> {
        self.slots.get(name).map(|s| &s.m)
    }

    pub fn second_moment(&self, name: &str) -> Option<&DenseArray<T>> {
        self.slots.get(name).map(|s| &s.v)
    }

    /// Mutable access to one parameter value; moments are untouched.
    pub fn value_mut(&mut self, name: &str) -> Option<&mut DenseArray<T>> {
        self.slots.get_mut(name).map(|s| &mut s.value)
    }

    /// Copy of the values in another precision. Moments start at zero.
    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        let mut out = ParameterStore::new();
        for (name, s) in &self.slots {
            out.insert(name.clone(), s.value.cast()).expect("names are unique");
        }
        out.step = self.step;
        out
    }

    fn check_keys(&self, grads: &GradMap<T>) -> Result<()> {
        if grads.len() != self.slots.len() {
            return Err(NnError::GradientKeys(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.slots.len()
            )));
        }
        for (name, g) in grads {
            match self.slots.get(name) {
                None => return Err(NnError::GradientKeys(format!("unknown `{name}`"))),
                Some(s) if s.value.shape() != g.shape() => {
                    return Err(NnError::GradientKeys(format!(
                        "`{name}`: gradient {:?} vs parameter {:?}",
                        g.shape(),
                        s.value.shape()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// One bias-corrected Adam step.
    pub fn adam_step(&mut self, grads: &GradMap<T>, cfg: &AdamConfig) -> Result<()> {
        self.check_keys(grads)?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
        let step_size = T::of(cfg.lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(cfg.eps);
        for (name, g) in grads {
            let slot = self.slots.get_mut(name).expect("keys checked");
            let Slot { value, m, v } = slot;
            for (((p, mi), vi), &gi) in value
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                *p = *p - step_size * *mi / ((*vi * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

pub fn global_norm<T: Real>(grads: &GradMap<T>) -> f64 {
    grads.values().map(|g| g.sum_squares()).sum::<f64>().sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut GradMap<T>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let factor = T::of(max_norm / norm);
        for g in grads.values_mut() {
            for x in g.data_mut() {
                *x = *x * factor;
            }
        }
    }
    norm
}
