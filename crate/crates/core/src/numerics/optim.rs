//! Named parameter collections and the AdamW optimizer.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Ordered map of named parameter tensors. BTreeMap keeps iteration order
/// deterministic, which matters for reproducible training and for the
/// checkpoint layout.
#[derive(Clone, Debug, Default)]
pub struct Params {
    map: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        debug_assert!(!self.map.contains_key(&name), "duplicate param {name}");
        self.map.insert(name, t);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown param {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn set(&mut self, name: &str, t: Tensor) {
        debug_assert!(self.map.contains_key(name), "unknown param {name}");
        self.map.insert(name.to_string(), t);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.map.values().map(Tensor::numel).sum()
    }

    /// Register every parameter as a differentiable tape leaf.
    pub fn leaves(&self, tape: &mut Tape) -> BTreeMap<String, Var> {
        self.map
            .iter()
            .map(|(name, t)| (name.clone(), tape.leaf(t.clone(), true)))
            .collect()
    }

    /// Register every parameter as a constant (inference mode).
    pub fn constants(&self, tape: &mut Tape) -> BTreeMap<String, Var> {
        self.map
            .iter()
            .map(|(name, t)| (name.clone(), tape.constant(t.clone())))
            .collect()
    }

    /// Merge another collection under a key prefix.
    pub fn extend_prefixed(&mut self, prefix: &str, other: &Params) {
        for (name, t) in other.iter() {
            self.insert(format!("{prefix}.{name}"), t.clone());
        }
    }

    /// Split out the sub-collection under a prefix, stripping it.
    pub fn subset(&self, prefix: &str) -> Params {
        let full = format!("{prefix}.");
        let mut out = Params::new();
        for (name, t) in &self.map {
            if let Some(stripped) = name.strip_prefix(&full) {
                out.insert(stripped, t.clone());
            }
        }
        out
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// AdamW with decoupled weight decay. Moment buffers are keyed by parameter
/// name so the optimizer state survives checkpointing.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step_count: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step_count: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &BTreeMap<String, Tensor>) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let names: Vec<String> = params.names().cloned().collect();
        for name in names {
            let Some(grad) = grads.get(&name) else {
                continue;
            };
            let old = params.get(&name).clone();
            let n = old.numel();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let mut data = old.to_vec();
            for i in 0..n {
                let g = grad.data()[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= c.lr * (mhat / (vhat.sqrt() + c.eps) + c.weight_decay * data[i]);
            }
            params.set(&name, Tensor::new(old.shape().to_vec(), data));
        }
    }
}
