//! Named trainable parameters and their gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Flat, ordered collection of parameters. Ids are insertion indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let id = ParamId(self.params.len());
        self.params.push(Param {
            name: name.into(),
            value,
        });
        id
    }

    /// Adds a `rows x cols` matrix with Xavier-uniform initialization.
    pub fn add_xavier(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        self.add(name, xavier_uniform(rows, cols, rng))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Tensor::zeros(rows, cols))
    }

    pub fn add_filled(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        value: f64,
    ) -> ParamId {
        self.add(name, Tensor::filled(rows, cols, value))
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .map(ParamId)
    }
}

/// Glorot/Xavier uniform initialization.
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    Tensor::from_vec(rows, cols, data)
}

/// Gradients indexed by [`ParamId`]. `None` means the parameter did not
/// take part in the computation.
#[derive(Debug, Clone, Default)]
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn new(num_params: usize) -> Self {
        Self {
            slots: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn accumulate(&mut self, id: ParamId, grad: &Tensor) {
        if self.slots.len() <= id.0 {
            self.slots.resize(id.0 + 1, None);
        }
        match &mut self.slots[id.0] {
            Some(g) => g.add_assign(grad),
            slot @ None => *slot = Some(grad.clone()),
        }
    }

    pub(crate) fn accumulate_owned(&mut self, id: ParamId, grad: Tensor) {
        if self.slots.len() <= id.0 {
            self.slots.resize(id.0 + 1, None);
        }
        match &mut self.slots[id.0] {
            Some(g) => g.add_assign(&grad),
            slot @ None => *slot = Some(grad),
        }
    }

    /// Drops the gradient of `id`, so optimizers skip it.
    pub fn remove(&mut self, id: ParamId) -> Option<Tensor> {
        self.slots.get_mut(id.0).and_then(Option::take)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn global_norm(&self) -> f64 {
        self.iter().map(|(_, g)| g.sq_norm()).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }

    /// Rescales so the global L2 norm does not exceed `max_norm`. Returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            self.scale(max_norm / (norm + 1e-6));
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.iter()
            .all(|(_, g)| g.data().iter().all(|x| x.is_finite()))
    }
}
