use super::tensor::Tensor;
use crate::error::{bail, Result};

/// Handle to one tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Accumulated by `Graph::backward`, cleared only by [`ParamStore::zero_grad`].
    pub grad: Option<Tensor>,
    /// Buffers (batch-norm running statistics) are stored but never optimised.
    pub trainable: bool,
}

/// Flat, name-addressed storage for every weight and buffer of a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// The parameters belonging to one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerParams {
    pub identifier: String,
    pub params: Vec<ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        assert!(
            self.find(&name).is_none(),
            "parameter name `{name}` registered twice"
        );
        self.params.push(Param {
            name,
            value,
            grad: None,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.insert(name.into(), value, false)
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

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.params[id.0].grad.as_ref()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.ids().filter(|&id| self.get(id).trainable).collect()
    }

    /// Trainable parameters whose name starts with `prefix`.
    pub fn trainable_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| self.get(id).trainable && self.get(id).name.starts_with(prefix))
            .collect()
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor) {
        let p = &mut self.params[id.0];
        assert_eq!(p.value.shape(), grad.shape(), "gradient shape for `{}`", p.name);
        match &mut p.grad {
            Some(g) => g.add_assign(grad),
            slot @ None => *slot = Some(grad.clone()),
        }
    }

    /// Clears every gradient.
    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn total_numel(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    /// Overwrites values from `(name, tensor)` pairs. Every stored name must
    /// be present with the same shape; extra names are rejected.
    pub fn load_named(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        if tensors.len() != self.params.len() {
            bail!(
                Format,
                "checkpoint holds {} tensors, model has {}",
                tensors.len(),
                self.params.len()
            );
        }
        for (name, t) in tensors {
            let Some(id) = self.find(name) else {
                bail!(Format, "checkpoint tensor `{name}` is not a model parameter");
            };
            if self.value(id).shape() != t.shape() {
                bail!(
                    Shape,
                    "checkpoint tensor `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    self.value(id).shape()
                );
            }
            *self.value_mut(id) = t.clone();
        }
        Ok(())
    }
}
