//! Reverse-mode differentiation over a graph of reference-counted nodes.
//!
//! A node keeps its parents alive only when at least one of them needs a
//! gradient, so inference-only forward passes free intermediates as soon as
//! the last handle drops.

use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use crate::param::Param;
use crate::tensor::Tensor;

/// Computes parent gradients from (output gradient, output value, parent values).
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &Tensor, &[&Tensor]) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    backward: Option<BackwardFn>,
    param: Option<Param>,
    requires_grad: bool,
}

#[derive(Clone)]
pub struct Var(Rc<Node>);

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Var {
    /// Value that never receives a gradient.
    pub fn constant(value: Tensor) -> Self {
        Self(Rc::new(Node {
            value,
            parents: Vec::new(),
            backward: None,
            param: None,
            requires_grad: false,
        }))
    }

    /// Input leaf whose gradient is reported in [`Gradients`].
    pub fn leaf(value: Tensor) -> Self {
        Self(Rc::new(Node {
            value,
            parents: Vec::new(),
            backward: None,
            param: None,
            requires_grad: true,
        }))
    }

    pub(crate) fn param_leaf(value: Tensor, param: Param) -> Self {
        Self(Rc::new(Node {
            value,
            parents: Vec::new(),
            backward: None,
            param: Some(param),
            requires_grad: true,
        }))
    }

    /// Builds the result of an operation. The backward closure is kept only
    /// when some parent requires a gradient.
    pub(crate) fn from_op(value: Tensor, parents: Vec<Var>, backward: BackwardFn) -> Self {
        if parents.iter().any(Var::requires_grad) {
            Self(Rc::new(Node {
                value,
                parents,
                backward: Some(backward),
                param: None,
                requires_grad: true,
            }))
        } else {
            Self::constant(value)
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.0) as usize
    }

    /// Back-propagates from this node with unit seed gradient (the node is
    /// normally a scalar loss). Parameter gradients accumulate into their
    /// [`Param`]s; gradients of [`Var::leaf`] inputs are returned.
    pub fn backward(&self) -> Gradients {
        self.backward_with(Tensor::full(self.shape().to_vec(), 1.0))
    }

    pub fn backward_with(&self, seed: Tensor) -> Gradients {
        let mut leaves = HashMap::new();
        if !self.requires_grad() {
            return Gradients { leaves };
        }
        let order = self.topo_order();
        let mut pending: HashMap<usize, Tensor> = HashMap::new();
        pending.insert(self.key(), seed);
        for var in order.iter().rev() {
            let Some(grad) = pending.remove(&var.key()) else {
                continue;
            };
            let node = &var.0;
            if let Some(param) = &node.param {
                param.accumulate_grad(&grad);
                continue;
            }
            match &node.backward {
                Some(f) => {
                    let inputs: Vec<&Tensor> = node.parents.iter().map(|p| p.value()).collect();
                    let grads = f(&grad, &node.value, &inputs);
                    debug_assert_eq!(grads.len(), node.parents.len());
                    for (parent, g) in node.parents.iter().zip(grads) {
                        let Some(g) = g else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(g.shape(), parent.shape());
                        match pending.get_mut(&parent.key()) {
                            Some(acc) => acc.add_assign(&g),
                            None => {
                                pending.insert(parent.key(), g);
                            }
                        }
                    }
                }
                None => {
                    leaves.insert(var.key(), grad);
                }
            }
        }
        Gradients { leaves }
    }

    /// Post-order DFS; reversing it yields a valid reverse-mode schedule.
    fn topo_order(&self) -> Vec<Var> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(Var, bool)> = vec![(self.clone(), false)];
        while let Some((var, expanded)) = stack.pop() {
            if expanded {
                order.push(var);
                continue;
            }
            if !seen.insert(var.key()) {
                continue;
            }
            stack.push((var.clone(), true));
            for p in &var.0.parents {
                if p.requires_grad() && !seen.contains(&p.key()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }
}

/// Gradients of input leaves produced by [`Var::backward`].
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: &Var) -> Option<&Tensor> {
        self.leaves.get(&var.key())
    }
}
