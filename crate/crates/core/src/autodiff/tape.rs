use std::cell::RefCell;
use std::sync::Arc;

use super::ops::Primitive;
use super::tensor::{Scalar, Tensor};
use super::AutodiffError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Origin {
    Leaf,
    Op { prim: Primitive, inputs: Vec<usize> },
}

#[derive(Debug)]
struct Node<T> {
    origin: Origin,
    value: Arc<Tensor<T>>,
    requires_grad: bool,
}

/// Computation graph recorded in evaluation order.
///
/// Nodes are appended as primitives run, so every node's inputs precede it.
/// Recorded values are never mutated.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Result of a backward pass.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub grads: Vec<Tensor<T>>,
    /// `true` where the parameter does not influence the loss; its gradient is zero.
    pub unreached: Vec<bool>,
}

impl<T: Scalar> Gradients<T> {
    pub fn any_unreached(&self) -> bool {
        self.unreached.iter().any(|&u| u)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, origin: Origin, value: Arc<Tensor<T>>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            origin,
            value,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var {
        self.push(Origin::Leaf, Arc::new(value), true)
    }

    /// Records a trainable leaf without copying its data.
    pub fn param_shared(&self, value: Arc<Tensor<T>>) -> Var {
        self.push(Origin::Leaf, value, true)
    }

    /// Records a leaf that does not require gradients.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push(Origin::Leaf, Arc::new(value), false)
    }

    pub fn value(&self, v: Var) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Runs `prim` on `inputs` and records the result.
    pub fn apply(&self, prim: Primitive, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let values: Vec<&Tensor<T>> = inputs.iter().map(|v| nodes[v.0].value.as_ref()).collect();
            let value = prim.forward(&values)?;
            (value, inputs.iter().any(|v| nodes[v.0].requires_grad))
        };
        let origin = Origin::Op {
            prim,
            inputs: inputs.iter().map(|v| v.0).collect(),
        };
        Ok(self.push(origin, Arc::new(value), requires_grad))
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to `params`.
    ///
    /// The tape is left untouched, so this may be called repeatedly.
    pub fn gradients(&self, loss: Var, params: &[Var]) -> Result<Gradients<T>, AutodiffError> {
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        for p in params {
            let node = &nodes[p.0];
            if !matches!(node.origin, Origin::Leaf) || !node.requires_grad {
                return Err(AutodiffError::NotAParameter(p.0));
            }
        }

        let mut adjoint: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        adjoint[loss.0] = Some(Tensor::filled(loss_value.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            let Origin::Op { prim, inputs } = &node.origin else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = adjoint[id].take() else {
                continue;
            };
            let input_values: Vec<&Tensor<T>> = inputs.iter().map(|&i| nodes[i].value.as_ref()).collect();
            let input_grads = prim.backward(&input_values, &node.value, &grad);
            for (&i, g) in inputs.iter().zip(input_grads) {
                if !nodes[i].requires_grad {
                    continue;
                }
                match &mut adjoint[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
            // Leaves keep their adjoint; intermediate adjoints are dropped after use.
        }

        let mut grads = Vec::with_capacity(params.len());
        let mut unreached = Vec::with_capacity(params.len());
        for p in params {
            let reached = p.0 <= loss.0 && adjoint[p.0].is_some();
            unreached.push(!reached);
            grads.push(match adjoint.get(p.0).and_then(Option::as_ref) {
                Some(g) if reached => g.clone(),
                _ => Tensor::zeros(nodes[p.0].value.shape()),
            });
        }
        if unreached.iter().any(|&u| u) {
            log::warn!("{} parameter(s) do not influence the loss", unreached.iter().filter(|&&u| u).count());
        }
        Ok(Gradients { grads, unreached })
    }
}
