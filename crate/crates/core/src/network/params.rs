//! Named parameter and buffer storage with seeded initialisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Optimiser group of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Backbone,
    Decoder,
    Dgf,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Backbone, Group::Decoder, Group::Dgf];

    pub fn name(self) -> &'static str {
        match self {
            Group::Backbone => "backbone",
            Group::Decoder => "decoder",
            Group::Dgf => "dgf",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamStore<E: Element> {
    pub(crate) names: Vec<String>,
    pub(crate) groups: Vec<Group>,
    pub(crate) values: Vec<Tensor<E>>,
    pub(crate) buffer_names: Vec<String>,
    pub(crate) buffers: Vec<Tensor<E>>,
}

impl<E: Element> ParamStore<E> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn values(&self) -> &[Tensor<E>] {
        &self.values
    }

    pub fn buffer_names(&self) -> &[String] {
        &self.buffer_names
    }

    pub fn buffers(&self) -> &[Tensor<E>] {
        &self.buffers
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Replaces parameter `i`, keeping its shape.
    pub fn set(&mut self, i: usize, value: Tensor<E>) -> Result<()> {
        if value.shape() != self.values[i].shape() {
            return Err(Error::shape("parameter update", self.values[i].dims(), value.dims()));
        }
        self.values[i] = value;
        Ok(())
    }

    pub fn set_buffer(&mut self, i: usize, value: Tensor<E>) -> Result<()> {
        if value.shape() != self.buffers[i].shape() {
            return Err(Error::shape("buffer update", self.buffers[i].dims(), value.dims()));
        }
        self.buffers[i] = value;
        Ok(())
    }

    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        ParamStore {
            names: self.names.clone(),
            groups: self.groups.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            buffer_names: self.buffer_names.clone(),
            buffers: self.buffers.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Builds a [`ParamStore`] in declaration order from one seeded stream.
pub(crate) struct Init {
    rng: ChaCha8Rng,
    group: Group,
    store: ParamStore<f32>,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            group: Group::Backbone,
            store: ParamStore {
                names: Vec::new(),
                groups: Vec::new(),
                values: Vec::new(),
                buffer_names: Vec::new(),
                buffers: Vec::new(),
            },
        }
    }

    pub fn set_group(&mut self, group: Group) {
        self.group = group;
    }

    pub fn push(&mut self, name: String, value: Tensor<f32>) -> usize {
        debug_assert!(!self.store.names.contains(&name), "duplicate parameter {name}");
        self.store.names.push(name);
        self.store.groups.push(self.group);
        self.store.values.push(value);
        self.store.len() - 1
    }

    pub fn buffer(&mut self, name: String, value: Tensor<f32>) -> usize {
        self.store.buffer_names.push(name);
        self.store.buffers.push(value);
        self.store.buffers.len() - 1
    }

    /// Uniform in `±1/√fan_in`.
    pub fn uniform(&mut self, name: String, dims: Vec<usize>, fan_in: usize) -> usize {
        let bound = 1.0 / (fan_in as f32).sqrt();
        let numel = dims.iter().product();
        let data = (0..numel).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.push(name, Tensor::from_vec(dims, data).expect("positive extents"))
    }

    pub fn constant(&mut self, name: String, dims: Vec<usize>, value: f32) -> usize {
        self.push(name, Tensor::full(dims, value).expect("positive extents"))
    }

    pub fn finish(self) -> ParamStore<f32> {
        self.store
    }
}
