use std::cmp::Reverse;
use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::Tensor;

/// Maps the gradient flowing into a node onto one gradient per parent
/// (`None` for parents that do not require a gradient).
pub(crate) type GradFn = Box<dyn Fn(&Tensor) -> Vec<Option<Tensor>> + Send + Sync>;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

struct Node {
    id: u64,
    value: Arc<Tensor>,
    requires_grad: bool,
    parents: Vec<Var>,
    grad_fn: Option<GradFn>,
}

/// A node of the computation graph. Cloning is cheap.
///
/// Nodes only keep their parents when some parent requires a gradient, so
/// graphs built from constants free intermediates as soon as they go out of
/// scope.
#[derive(Clone)]
pub struct Var(Arc<Node>);

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Var {
    fn make(
        value: Arc<Tensor>,
        requires_grad: bool,
        parents: Vec<Var>,
        grad_fn: Option<GradFn>,
    ) -> Self {
        Var(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            parents,
            grad_fn,
        }))
    }

    /// A value that never receives a gradient.
    pub fn constant(value: Tensor) -> Self {
        Self::make(Arc::new(value), false, Vec::new(), None)
    }

    /// A leaf that accumulates a gradient during [`Var::backward`].
    pub fn leaf(value: Tensor) -> Self {
        Self::make(Arc::new(value), true, Vec::new(), None)
    }

    pub fn from_shared(value: Arc<Tensor>, requires_grad: bool) -> Self {
        Self::make(value, requires_grad, Vec::new(), None)
    }

    pub(crate) fn from_op(value: Tensor, parents: &[&Var], grad_fn: GradFn) -> Self {
        Self::from_op_shared(Arc::new(value), parents, grad_fn)
    }

    pub(crate) fn from_op_shared(value: Arc<Tensor>, parents: &[&Var], grad_fn: GradFn) -> Self {
        if parents.iter().any(|p| p.requires_grad()) {
            let parents = parents.iter().map(|&p| p.clone()).collect();
            Self::make(value, true, parents, Some(grad_fn))
        } else {
            Self::make(value, false, Vec::new(), None)
        }
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shared_value(&self) -> Arc<Tensor> {
        Arc::clone(&self.0.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Self::from_shared(self.shared_value(), false)
    }

    /// Reverse-mode sweep from a one-element root.
    pub fn backward(&self) -> Gradients {
        assert_eq!(self.value().numel(), 1, "backward() needs a scalar root");
        let mut grads = Gradients::default();
        if !self.requires_grad() {
            return grads;
        }

        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        seen.insert(self.id());
        while let Some(v) = stack.pop() {
            for p in &v.0.parents {
                if p.requires_grad() && seen.insert(p.id()) {
                    stack.push(p.clone());
                }
            }
            order.push(v);
        }
        // Parents are always created before their children.
        order.sort_by_key(|v| Reverse(v.id()));

        let mut pending: HashMap<u64, Tensor> = HashMap::new();
        pending.insert(self.id(), Tensor::full(self.shape(), 1.0));
        for v in order {
            let Some(g) = pending.remove(&v.id()) else {
                continue;
            };
            let Some(grad_fn) = &v.0.grad_fn else {
                grads.map.insert(v.id(), g);
                continue;
            };
            let parent_grads = grad_fn(&g);
            debug_assert_eq!(parent_grads.len(), v.0.parents.len());
            for (p, pg) in v.0.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !p.requires_grad() {
                    continue;
                }
                debug_assert_eq!(
                    pg.shape(),
                    p.shape(),
                    "gradient shape for parent of node {}",
                    v.id()
                );
                match pending.get_mut(&p.id()) {
                    Some(acc) => acc.add_assign(&pg),
                    None => {
                        pending.insert(p.id(), pg);
                    }
                }
            }
        }
        grads
    }
}

/// Gradients of the leaves reached by a backward sweep.
#[derive(Default, Debug)]
pub struct Gradients {
    map: HashMap<u64, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: &Var) -> Option<&Tensor> {
        self.map.get(&leaf.id())
    }

    pub fn remove(&mut self, leaf: &Var) -> Option<Tensor> {
        self.map.remove(&leaf.id())
    }
}
