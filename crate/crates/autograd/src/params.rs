use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::{Gradients, Result, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Arc<Tensor>,
    /// Buffers such as running statistics are stored but never optimised.
    pub trainable: bool,
}

/// Named, ordered parameter table.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        value: Tensor,
        trainable: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value: Arc::new(value),
            trainable,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    /// Mutable access, copying the tensor first if a graph still shares it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let slot = &mut self.params[id.0];
        if slot.value.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set_param",
                lhs: slot.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        slot.value = Arc::new(value);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_trainable_scalars(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }
}

/// Binds a [`ParamStore`] to one forward pass.
///
/// Each parameter maps to a single leaf per binding, so a parameter used in
/// several places (shared encoders) accumulates one gradient. Buffer updates
/// requested during the pass are queued rather than applied.
pub struct Binding<'a> {
    store: &'a ParamStore,
    grad: bool,
    leaves: RefCell<Vec<Option<Var>>>,
    updates: RefCell<Vec<(ParamId, Tensor)>>,
}

impl<'a> Binding<'a> {
    pub fn new(store: &'a ParamStore, grad: bool) -> Self {
        Self {
            store,
            grad,
            leaves: RefCell::new(vec![None; store.len()]),
            updates: RefCell::new(Vec::new()),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad
    }

    pub fn var(&self, id: ParamId) -> Var {
        let mut leaves = self.leaves.borrow_mut();
        leaves[id.0]
            .get_or_insert_with(|| {
                let p = self.store.param(id);
                Var::from_shared(Arc::clone(&p.value), self.grad && p.trainable)
            })
            .clone()
    }

    pub fn buffer(&self, id: ParamId) -> &'a Tensor {
        self.store.get(id)
    }

    pub fn queue_update(&self, id: ParamId, value: Tensor) {
        self.updates.borrow_mut().push((id, value));
    }

    pub fn take_updates(&self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.updates.borrow_mut())
    }

    /// Gradients of every bound trainable parameter, in store order.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        self.leaves
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, leaf)| {
                let leaf = leaf.as_ref()?;
                grads.get(leaf).map(|g| (ParamId(i), g.clone()))
            })
            .collect()
    }
}
