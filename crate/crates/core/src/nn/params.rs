//! Named parameter storage, gradients and the Adam optimizer.

use std::collections::BTreeMap;

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: BTreeMap<String, ParamId>,
    /// Seed the initial values were drawn from.
    pub seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            index: BTreeMap::new(),
            seed,
        }
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Glorot-uniform weight matrix.
    pub fn weight(&mut self, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Result<ParamId> {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let v = Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-a..a));
        self.insert(name, v)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.insert(name, Array2::zeros((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn size(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Reads scalar `k` of the flattened parameter vector.
    pub fn flat_get(&self, k: usize) -> f64 {
        let (id, off) = self.locate(k);
        self.values[id].as_slice().unwrap()[off]
    }

    pub fn flat_set(&mut self, k: usize, v: f64) {
        let (id, off) = self.locate(k);
        self.values[id].as_slice_mut().unwrap()[off] = v;
    }

    fn locate(&self, mut k: usize) -> (usize, usize) {
        for (i, v) in self.values.iter().enumerate() {
            if k < v.len() {
                return (i, k);
            }
            k -= v.len();
        }
        panic!("flat parameter index out of range")
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in self.names.iter().zip(&self.values) {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
        }
        Ok(())
    }
}

/// Gradients aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    values: Vec<Array2<f64>>,
}

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            values: store.values.iter().map(|v| Array2::zeros(v.dim())).collect(),
        }
    }

    pub fn add(&mut self, id: ParamId, g: &Array2<f64>) {
        self.values[id.0] += g;
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn flat_get(&self, mut k: usize) -> f64 {
        for v in &self.values {
            if k < v.len() {
                return v.as_slice().unwrap()[k];
            }
            k -= v.len();
        }
        panic!("flat gradient index out of range")
    }

    /// Adds `other * c` into `self`, parameter by parameter in index order.
    pub fn accumulate(&mut self, other: &Grads, c: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            a.scaled_add(c, b);
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; disabled when `None`.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: Some(5.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub t: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || store.values.iter().map(|p| Array2::zeros(p.dim())).collect();
        Self {
            cfg,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update; fails if any parameter becomes non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> Result<()> {
        let norm = grads.norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let c = match self.cfg.clip {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let (lr, eps) = (self.cfg.lr, self.cfg.eps);
        for (i, p) in store.values.iter_mut().enumerate() {
            Zip::from(p)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(&grads.values[i])
                .for_each(|p, m, v, &g| {
                    let g = g * c;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
        store.check_finite()
    }
}
