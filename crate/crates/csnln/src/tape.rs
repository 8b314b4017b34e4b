//! Reverse-mode gradient tape.
//!
//! Differentiable ops take an `Option<&GradTape>`. With `None` they are plain
//! forward computations. With a tape, each op that touches a tracked tensor
//! (a `requires_grad` leaf or the output of an earlier recorded op) appends a
//! node holding the closure that maps the output gradient to input-gradient
//! contributions. [`GradTape::backward`] replays the nodes in reverse; because
//! ops record themselves in execution order, that reverse walk is a valid
//! topological order and each tensor's gradient is fully accumulated before
//! its producing node runs.
//!
//! A tensor used several times (shared weights across recurrence steps, `x*x`)
//! simply receives several accumulations into the same slot.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor, TensorId};

type BackFn<E> = Box<dyn FnOnce(&Tensor<E>, &mut GradStore<E>) -> Result<()>>;

struct Node<E: Element> {
    out: TensorId,
    op: &'static str,
    back: BackFn<E>,
}

/// Accumulated gradients keyed by tensor identity.
pub struct GradStore<E: Element> {
    grads: HashMap<TensorId, Tensor<E>>,
}

impl<E: Element> GradStore<E> {
    fn new() -> Self {
        GradStore { grads: HashMap::new() }
    }

    pub fn get(&self, t: &Tensor<E>) -> Option<&Tensor<E>> {
        self.grads.get(&t.id())
    }

    pub fn get_id(&self, id: TensorId) -> Option<&Tensor<E>> {
        self.grads.get(&id)
    }

    /// Gradient of a tensor that must have one; errors otherwise.
    pub fn expect(&self, t: &Tensor<E>) -> Result<&Tensor<E>> {
        self.get(t).ok_or_else(|| {
            Error::Autodiff(format!("no gradient accumulated for tensor {:?}", t.id()))
        })
    }

    /// Add a contribution into a tensor's gradient slot.
    pub fn accumulate(&mut self, id: TensorId, g: Tensor<E>) -> Result<()> {
        match self.grads.remove(&id) {
            None => {
                self.grads.insert(id, g);
            }
            Some(prev) => {
                if prev.shape() != g.shape() {
                    return Err(Error::shape(
                        "grad_accumulate",
                        format!("{} vs {}", prev.shape(), g.shape()),
                    ));
                }
                let data: Vec<E> =
                    prev.data().iter().zip(g.data()).map(|(&a, &b)| a + b).collect();
                self.grads.insert(id, Tensor::op_output("grad_accumulate", g.shape(), data)?);
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Ordered record of executed differentiable ops.
///
/// Interior-mutable so ops can append through a shared reference; not `Sync`,
/// a tape lives on one logical training thread.
pub struct GradTape<E: Element> {
    nodes: RefCell<Vec<Node<E>>>,
    tracked: RefCell<HashSet<TensorId>>,
}

impl<E: Element> Default for GradTape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> GradTape<E> {
    pub fn new() -> Self {
        GradTape { nodes: RefCell::new(Vec::new()), tracked: RefCell::new(HashSet::new()) }
    }

    /// Whether gradients must flow into this tensor: it is a `requires_grad`
    /// leaf or was produced by a recorded op on this tape.
    pub fn is_tracked(&self, t: &Tensor<E>) -> bool {
        t.requires_grad() || self.tracked.borrow().contains(&t.id())
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Append a node for `out`. Called by ops after computing their result.
    pub(crate) fn record<F>(&self, out: &Tensor<E>, op: &'static str, back: F)
    where
        F: FnOnce(&Tensor<E>, &mut GradStore<E>) -> Result<()> + 'static,
    {
        self.tracked.borrow_mut().insert(out.id());
        self.nodes.borrow_mut().push(Node { out: out.id(), op, back: Box::new(back) });
    }

    /// Reverse replay from a scalar loss. Consumes the tape; returns the
    /// gradient store with one accumulated gradient per tracked tensor that
    /// the loss actually depends on.
    pub fn backward(self, loss: &Tensor<E>) -> Result<GradStore<E>> {
        if loss.shape() != Shape::new(1, 1, 1, 1) {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar loss, got {}",
                loss.shape()
            )));
        }
        if !self.tracked.borrow().contains(&loss.id()) {
            return Err(Error::Autodiff(
                "loss was not produced on this tape".to_string(),
            ));
        }
        let mut store = GradStore::new();
        store.accumulate(loss.id(), Tensor::full(Shape::new(1, 1, 1, 1), E::one())?)?;
        let nodes = self.nodes.into_inner();
        for node in nodes.into_iter().rev() {
            let g = match store.get_id(node.out) {
                Some(g) => g.clone(),
                // Output never influenced the loss (e.g. a side branch); skip.
                None => continue,
            };
            (node.back)(&g, &mut store).map_err(|e| {
                Error::Autodiff(format!("backward of {} failed: {e}", node.op))
            })?;
        }
        Ok(store)
    }
}
