//! Named parameter storage and the convolution layer used by every network.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Graph, Var};
use crate::error::{Result, StedError};
use crate::tensor::{Real, Tensor};

pub const LEAKY_SLOPE: f64 = 0.1;

/// Flat, ordered map from stable parameter names to tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
    trainable: bool,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
            trainable: true,
        }
    }

    /// A store whose parameters never receive gradients.
    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn require_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| StedError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    /// Copies every tensor of `other` under `prefix`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: &ParamStore<T>) {
        for (k, v) in &other.tensors {
            self.tensors.insert(format!("{prefix}{k}"), v.clone());
        }
    }

    /// Sub-store of tensors whose names start with `prefix`, prefix stripped.
    pub fn extract_prefixed(&self, prefix: &str) -> ParamStore<T> {
        let tensors = self
            .tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect();
        ParamStore {
            tensors,
            trainable: self.trainable,
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            trainable: self.trainable,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.is_finite())
    }
}

/// Stride-1 same-padding convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, k: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            k,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Kaiming-normal fan-in init (leaky-ReLU gain), zero bias.
    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) {
        let fan_in = (self.cin * self.k * self.k) as f64;
        let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
        self.init_scaled(store, rng, gain / fan_in.sqrt());
    }

    pub fn init_scaled<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng, std: f64) {
        let normal = Normal::new(0.0, std.max(f64::MIN_POSITIVE)).expect("valid std");
        let shape = [self.cout, self.cin, self.k, self.k];
        let w = Tensor::from_fn(shape, |_, _, _, _| {
            if std == 0.0 {
                T::zero()
            } else {
                T::lit(normal.sample(rng))
            }
        });
        store.insert(self.weight_name(), w);
        store.insert(self.bias_name(), Tensor::zeros([1, self.cout, 1, 1]));
    }

    pub fn init_zero<T: Real>(&self, store: &mut ParamStore<T>) {
        store.insert(self.weight_name(), Tensor::zeros([self.cout, self.cin, self.k, self.k]));
        store.insert(self.bias_name(), Tensor::zeros([1, self.cout, 1, 1]));
    }

    pub fn forward<T: Real>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, &self.weight_name())?;
        let b = g.param(store, &self.bias_name())?;
        g.conv2d(x, w, Some(b))
    }

    /// Convolution followed by leaky ReLU.
    pub fn forward_act<T: Real>(&self, g: &Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.forward(g, store, x)?;
        Ok(g.leaky_relu(y, T::lit(LEAKY_SLOPE)))
    }
}
