//! Reverse-mode automatic differentiation on a per-step tape.
//!
//! Every training step builds a fresh [`Tape`]: parameters enter as
//! differentiable leaves, frozen weights and data as constants, and each
//! operation records a backward closure. [`Tape::backward`] walks the nodes
//! in reverse creation order (parents always precede children) and
//! accumulates gradients only along paths that require them.
//!
//! Tensors are `f64` [`ndarray::ArrayD`] values. Feature maps use a
//! channels-by-pixels layout; see [`image`] for the conversions.

mod ops;
mod spatial;

pub mod image;

pub use spatial::FeatureMap;

use ndarray::{ArrayD, IxDyn};
use std::cell::RefCell;

/// Gradients for each parent, in parent order.
type BackwardFn = Box<dyn Fn(&ArrayD<f64>, &[&ArrayD<f64>], &ArrayD<f64>) -> Vec<ArrayD<f64>>>;

struct Node {
    value: ArrayD<f64>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Records the computation graph for one forward/backward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a tensor on a tape.
#[derive(Clone, Copy)]
pub struct Value<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Insert a differentiable leaf (a trainable parameter).
    pub fn param(&self, value: ArrayD<f64>) -> Value<'_> {
        let id = self.push(Node { value, parents: vec![], requires_grad: true, backward: None });
        Value { tape: self, id }
    }

    /// Insert a non-differentiable leaf (data or a frozen weight).
    /// Constants never accumulate gradient; frozen weights stay frozen by construction.
    pub fn constant(&self, value: ArrayD<f64>) -> Value<'_> {
        let id = self.push(Node { value, parents: vec![], requires_grad: false, backward: None });
        Value { tape: self, id }
    }

    /// Scalar constant (0-dimensional tensor).
    pub fn scalar(&self, x: f64) -> Value<'_> {
        self.constant(ArrayD::from_elem(IxDyn(&[]), x))
    }

    pub(crate) fn record(
        &self,
        value: ArrayD<f64>,
        parents: Vec<usize>,
        backward: BackwardFn,
    ) -> Value<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|&p| nodes[p].requires_grad)
        };
        let backward = if requires_grad { Some(backward) } else { None };
        let id = self.push(Node { value, parents, requires_grad, backward });
        Value { tape: self, id }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Run reverse-mode accumulation from a scalar loss.
    ///
    /// Panics if `loss` does not hold exactly one element.
    pub fn backward(&self, loss: Value<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[loss.id].value.len(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            nodes[loss.id].value.shape()
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(ArrayD::from_elem(nodes[loss.id].value.raw_dim(), 1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(grad_out) = grads[id].take() else { continue };
            if let Some(backward) = &node.backward {
                let parent_vals: Vec<&ArrayD<f64>> =
                    node.parents.iter().map(|&p| &nodes[p].value).collect();
                let parent_grads = backward(&grad_out, &parent_vals, &node.value);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&pid, pgrad) in node.parents.iter().zip(parent_grads) {
                    if !nodes[pid].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(
                        pgrad.shape(),
                        nodes[pid].value.shape(),
                        "gradient shape mismatch for parent {pid}"
                    );
                    match &mut grads[pid] {
                        Some(acc) => *acc += &pgrad,
                        slot => *slot = Some(pgrad),
                    }
                }
            }
            grads[id] = Some(grad_out);
        }
        Gradients { grads }
    }
}

impl<'t> Value<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub(crate) fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Clone the current tensor value off the tape.
    pub fn value(&self) -> ArrayD<f64> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Extract a scalar; panics when the tensor is not single-element.
    pub fn scalar_value(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        let v = &nodes[self.id].value;
        assert_eq!(v.len(), 1, "scalar_value on shape {:?}", v.shape());
        *v.iter().next().unwrap()
    }

    pub(crate) fn with_value<R>(&self, f: impl FnOnce(&ArrayD<f64>) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }
}

/// Gradient store produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; zeros when no path reached it.
    pub fn get(&self, v: Value<'_>) -> ArrayD<f64> {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => ArrayD::zeros(IxDyn(&v.shape())),
        }
    }

    /// Whether any gradient was accumulated for `v`.
    pub fn reached(&self, v: Value<'_>) -> bool {
        self.grads[v.id].is_some()
    }
}

#[cfg(test)]
mod tests;
