use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::ops::{self, Op};
use crate::tensor::Tensor;

pub(crate) struct Node<T> {
    pub(crate) value: Arc<Tensor<T>>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

/// A dynamic computation graph. Every op appends a node; `backward`
/// walks the nodes in reverse insertion order, which is a valid
/// topological order because inputs always precede their consumers.
///
/// A graph is rebuilt for each forward pass and dropped afterwards.
pub struct Graph<T: Element> {
    tape: RefCell<Tape<T>>,
    grad_enabled: bool,
}

/// Handle to a node of a [`Graph`].
pub struct Var<'g, T: Element> {
    pub(crate) id: usize,
    pub(crate) graph: &'g Graph<T>,
}

impl<T: Element> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Element> Copy for Var<'_, T> {}

impl<T: Element> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Graph {
            tape: RefCell::new(Tape { nodes: Vec::new(), grads: Vec::new(), backward_done: false }),
            grad_enabled: true,
        }
    }

    /// A graph that never tracks gradients; for inference.
    pub fn inference() -> Self {
        Graph { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: impl Into<Arc<Tensor<T>>>) -> Var<'_, T> {
        self.leaf(value.into(), self.grad_enabled)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: impl Into<Arc<Tensor<T>>>) -> Var<'_, T> {
        self.leaf(value.into(), false)
    }

    pub fn leaf(&self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var<'_, T> {
        self.push_node(Node { value, op: Op::Leaf, requires_grad })
    }

    fn push_node(&self, node: Node<T>) -> Var<'_, T> {
        let mut tape = self.tape.borrow_mut();
        tape.nodes.push(node);
        Var { id: tape.nodes.len() - 1, graph: self }
    }

    pub(crate) fn push(&self, name: &'static str, value: Tensor<T>, op: Op) -> Result<Var<'_, T>> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = self.grad_enabled && {
            let tape = self.tape.borrow();
            op.inputs().iter().any(|&i| tape.nodes[i].requires_grad)
        };
        // inference graphs only need the value, not the op record
        let op = if requires_grad { op } else { Op::Leaf };
        Ok(self.push_node(Node { value: Arc::new(value), op, requires_grad }))
    }

    pub(crate) fn value_of(&self, id: usize) -> Arc<Tensor<T>> {
        self.tape.borrow().nodes[id].value.clone()
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.tape.borrow().nodes[id].requires_grad
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Fails if `loss` is not a single element, or if gradients from a
    /// previous sweep have not been cleared with [`Graph::reset_grads`].
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let mut tape = self.tape.borrow_mut();
        if tape.backward_done {
            return Err(TensorError::Contract(
                "backward called twice without reset_grads".into(),
            ));
        }
        let root = &tape.nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let n = tape.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        if root.requires_grad {
            grads[loss.id] = Some(vec![T::one()]);
        }
        let nodes = &tape.nodes;
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            ops::backward(&node.op, nodes, &node.value, &g, &mut grads);
            grads[id] = Some(g);
        }
        tape.grads = grads;
        tape.backward_done = true;
        Ok(())
    }

    pub fn reset_grads(&self) {
        let mut tape = self.tape.borrow_mut();
        tape.grads.clear();
        tape.backward_done = false;
    }

    /// Gradient of the last backward sweep w.r.t. `var`, if it was reached.
    pub fn grad(&self, var: Var<'_, T>) -> Option<Tensor<T>> {
        let tape = self.tape.borrow();
        let g = tape.grads.get(var.id)?.as_ref()?;
        let shape = tape.nodes[var.id].value.shape().to_vec();
        Tensor::new(shape, g.clone()).ok()
    }
}

impl<'g, T: Element> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.tape.borrow().nodes[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad_of(self.id)
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.graph.grad(*self)
    }
}
