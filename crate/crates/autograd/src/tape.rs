use ndarray::{ArrayD, IxDyn};

use crate::{AutogradError, Element, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

/// Gradient contributions for each input of a recorded operation.
pub(crate) trait BackwardOp<E: Element> {
    fn backward(
        &self,
        inputs: &[&ArrayD<E>],
        output: &ArrayD<E>,
        grad: &ArrayD<E>,
    ) -> Vec<Option<ArrayD<E>>>;
}

struct Node<E: Element> {
    parents: Vec<usize>,
    op: Option<Box<dyn BackwardOp<E>>>,
    needs_grad: bool,
}

/// Append-only record of one forward computation.
///
/// A tape is confined to a single execution context; backward traverses the
/// exact reverse of the recorded order and accumulates gradients additively
/// at fan-out points.
pub struct Tape<E: Element> {
    values: Vec<ArrayD<E>>,
    nodes: Vec<Node<E>>,
    grads: Vec<Option<ArrayD<E>>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Record an input value. Gradients are tracked only when requested.
    pub fn leaf(&mut self, value: ArrayD<E>, requires_grad: bool) -> Var {
        self.values.push(value);
        self.nodes.push(Node {
            parents: Vec::new(),
            op: None,
            needs_grad: requires_grad,
        });
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    pub(crate) fn push(
        &mut self,
        value: ArrayD<E>,
        parents: Vec<usize>,
        op: Box<dyn BackwardOp<E>>,
    ) -> Var {
        let needs_grad = parents.iter().any(|&p| self.nodes[p].needs_grad);
        self.values.push(value);
        self.nodes.push(Node {
            parents,
            op: if needs_grad { Some(op) } else { None },
            needs_grad,
        });
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &ArrayD<E> {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    /// Scalar payload of a 0-d or single-element value.
    pub fn scalar(&self, v: Var) -> E {
        *self.values[v.0].iter().next().expect("empty tensor")
    }

    pub fn grad(&self, v: Var) -> Option<&ArrayD<E>> {
        self.grads[v.0].as_ref()
    }

    /// Reverse sweep from a scalar loss. Gradients of all grad-requiring
    /// values become available through [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.values[loss.0].len() != 1 {
            return Err(AutogradError::NonScalarLoss(
                self.values[loss.0].shape().to_vec(),
            ));
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        let seed = ArrayD::from_elem(IxDyn(self.values[loss.0].shape()), E::one());
        self.grads[loss.0] = Some(seed);
        for i in (0..self.values.len()).rev() {
            if self.grads[i].is_none() || self.nodes[i].op.is_none() {
                continue;
            }
            let grad = self.grads[i].clone().unwrap();
            let node = &self.nodes[i];
            let inputs: Vec<&ArrayD<E>> = node.parents.iter().map(|&p| &self.values[p]).collect();
            let parent_grads = node
                .op
                .as_ref()
                .unwrap()
                .backward(&inputs, &self.values[i], &grad);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            let parents = node.parents.clone();
            for (p, pg) in parents.into_iter().zip(parent_grads) {
                if !self.nodes[p].needs_grad {
                    continue;
                }
                if let Some(pg) = pg {
                    debug_assert_eq!(pg.shape(), self.values[p].shape());
                    match &mut self.grads[p] {
                        Some(acc) => *acc += &pg,
                        slot => *slot = Some(pg),
                    }
                }
            }
        }
        Ok(())
    }
}
