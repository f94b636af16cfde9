use std::collections::HashMap;

use crate::autodiff::error::{Result, TensorError};
use crate::autodiff::tensor::Tensor;
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifies a parameter tensor owned by a parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub store: u64,
    pub index: usize,
}

/// Vector-Jacobian product of one recorded operation.
pub trait BackwardRule<T: Scalar>: Send {
    fn name(&self) -> &'static str;

    /// One entry per recorded input, in recording order. `None` means no
    /// gradient flows to that input.
    fn backward(&self, ctx: &BackwardCtx<'_, T>, grad_out: &[T]) -> Result<Vec<Option<Vec<T>>>>;
}

pub struct BackwardCtx<'a, T> {
    tape: &'a Tape<T>,
    node: usize,
}

impl<'a, T: Scalar> BackwardCtx<'a, T> {
    pub fn input(&self, i: usize) -> &'a Tensor<T> {
        let var = self.tape.nodes[self.node].inputs[i];
        &self.tape.nodes[var.0].value
    }

    pub fn output(&self) -> &'a Tensor<T> {
        &self.tape.nodes[self.node].value
    }

    pub fn needs_grad(&self, i: usize) -> bool {
        let var = self.tape.nodes[self.node].inputs[i];
        self.tape.nodes[var.0].requires_grad
    }
}

struct Node<T> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    rule: Option<Box<dyn BackwardRule<T>>>,
    requires_grad: bool,
    param: Option<ParamKey>,
}

/// Linear record of executed operations, replayed in reverse by
/// [`Tape::backward`].
///
/// Inputs of every node precede it, so recording order is a topological
/// order of the computation graph.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamKey, Var>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A tape on which parameters never track gradients, for inference.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_node(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push_node(Node {
            value: value.detached(),
            inputs: Vec::new(),
            rule: None,
            requires_grad,
            param: None,
        })
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Records a copy of `tensor`, tracking gradients iff the tensor asks for them.
    pub fn input(&mut self, tensor: &Tensor<T>) -> Var {
        self.leaf(tensor.detached(), tensor.requires_grad())
    }

    /// Records a parameter once per tape; later calls return the same leaf.
    pub fn param(&mut self, key: ParamKey, tensor: &Tensor<T>, trainable: bool) -> Var {
        if let Some(&var) = self.params.get(&key) {
            return var;
        }
        let trainable = trainable && self.grad_enabled;
        let var = self.push_node(Node {
            value: tensor.detached(),
            inputs: Vec::new(),
            rule: None,
            requires_grad: trainable,
            param: trainable.then_some(key),
        });
        self.params.insert(key, var);
        var
    }

    /// Records the result of an operation. The rule is dropped when no
    /// input tracks gradients.
    pub fn push_op(
        &mut self,
        value: Tensor<T>,
        inputs: Vec<Var>,
        rule: Box<dyn BackwardRule<T>>,
    ) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(Node {
            value,
            inputs,
            rule: requires_grad.then_some(rule),
            requires_grad,
            param: None,
        })
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn item(&self, var: Var) -> Option<T> {
        self.nodes[var.0].value.item()
    }

    /// Reverse sweep from a scalar loss. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_value.shape().to_vec()));
        }

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        let mut leaves = HashMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            let Some(rule) = &node.rule else {
                if node.requires_grad {
                    leaves.insert(idx, grad);
                }
                continue;
            };
            let ctx = BackwardCtx {
                tape: &self,
                node: idx,
            };
            let input_grads = rule.backward(&ctx, &grad)?;
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", rule.name());
            for (input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.len(), self.nodes[input.0].value.len(), "{}", rule.name());
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|k| (k, i)))
            .collect();
        Ok(Gradients { leaves, params })
    }
}

/// Gradients of the leaves reached by a backward sweep.
pub struct Gradients<T> {
    leaves: HashMap<usize, Vec<T>>,
    params: HashMap<ParamKey, usize>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.leaves.get(&var.0).map(Vec::as_slice)
    }

    pub fn param(&self, key: ParamKey) -> Option<&[T]> {
        self.params.get(&key).and_then(|i| self.leaves.get(i)).map(Vec::as_slice)
    }

    /// Adds the gradient of `var` into `tensor`'s buffer.
    pub fn accumulate_into(&self, var: Var, tensor: &mut Tensor<T>) -> Result<()> {
        if let Some(g) = self.get(var) {
            tensor.accumulate_grad(g)?;
        }
        Ok(())
    }
}
