use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::numerics::Real;

/// Named model parameter. Names are slash-separated paths, unique within a
/// store, and stable across save/load.
#[derive(Debug, Clone)]
pub struct Parameter<R: Real> {
    pub name: String,
    pub tensor: Tensor<R>,
    pub trainable: bool,
}

/// Ordered collection of parameters. Registration order is the layout order
/// in checkpoints and in optimizer state, so it must be deterministic.
#[derive(Debug, Clone)]
pub struct ParamStore<R: Real> {
    params: Vec<Parameter<R>>,
    by_name: HashMap<String, usize>,
}

/// Stable handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor<R>) -> Result<ParamId> {
        self.register_with(name, tensor, true)
    }

    pub fn register_with(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor<R>,
        trainable: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            tensor,
            trainable,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<R> {
        &self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<R> {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        &mut self.params[id.0].tensor
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<R>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        let mut out = ParamStore::new();
        for p in &self.params {
            out.register_with(p.name.clone(), p.tensor.cast::<S>(), p.trainable)
                .expect("names already unique");
        }
        out
    }
}

impl<R: Real> Default for ParamStore<R> {
    fn default() -> Self {
        ParamStore::new()
    }
}
