use std::sync::atomic::{AtomicU64, Ordering};

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    index: usize,
    tape: u64,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

/// Reverse rule for one recorded operation.
///
/// `inputs` are the parent values in the order they were passed to
/// [`Tape::record`]. The returned vector has one entry per parent; `None`
/// means the op contributes nothing to that parent.
pub trait BackwardOp<T: Element>: Send {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

struct Node<T: Element> {
    value: Tensor<T>,
    parents: Vec<usize>,
    op: Option<Box<dyn BackwardOp<T>>>,
    requires_grad: bool,
}

/// Define-by-run record of executed operations.
pub struct Tape<T: Element> {
    id: u64,
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Node {
            value,
            parents: Vec::new(),
            op: None,
            requires_grad,
        })
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.check(v).expect("foreign Var");
        &self.nodes[v.index].value
    }

    pub(crate) fn get(&self, v: Var) -> Result<&Tensor<T>> {
        self.check(v)?;
        Ok(&self.nodes[v.index].value)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    /// Appends the result of an operation. The output must be finite; the
    /// backward rule is dropped when no parent needs a gradient.
    pub fn record<Op: BackwardOp<T> + 'static>(
        &mut self,
        value: Tensor<T>,
        parents: &[Var],
        op: Op,
    ) -> Result<Var> {
        for &p in parents {
            self.check(p)?;
        }
        if let Some(index) = value.first_non_finite() {
            return Err(TensorError::NonFinite {
                op: op.name(),
                index,
            });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.index].requires_grad);
        Ok(self.push(Node {
            value,
            parents: parents.iter().map(|p| p.index).collect(),
            op: if requires_grad { Some(Box::new(op)) } else { None },
            requires_grad,
        }))
    }

    /// Populates gradients of every `requires_grad` leaf reachable from
    /// `root`. A tape supports exactly one backward pass.
    pub fn backward(&mut self, root: Var) -> Result<Gradients<T>> {
        self.check(root)?;
        if self.consumed {
            return Err(TensorError::StaleTape);
        }
        let root_value = &self.nodes[root.index].value;
        if root_value.numel() != 1 {
            return Err(TensorError::NonScalarRoot(root_value.shape().to_vec()));
        }
        self.consumed = true;

        let mut pending: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root.index].requires_grad {
            pending[root.index] = Some(Tensor::ones(root_value.shape().to_vec()));
        }

        for i in (0..=root.index).rev() {
            let Some(grad) = pending[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let Some(op) = node.op.as_ref() else {
                leaf_grads[i] = Some(grad);
                continue;
            };
            let inputs: Vec<&Tensor<T>> =
                node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let parent_grads = op.backward(&inputs, &node.value, &grad);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", op.name());
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[p].value.shape(), "{}", op.name());
                match pending[p].as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => pending[p] = Some(g),
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads: leaf_grads,
        })
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var {
            index: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::UnknownVar(v.index));
        }
        Ok(())
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T: Element> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a leaf, `None` when the leaf was unreachable from the root
    /// or does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get_mut(v.index).and_then(|g| g.take())
    }
}
