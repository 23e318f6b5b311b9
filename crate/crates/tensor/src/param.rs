use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use crate::autograd::Var;
use crate::tensor::Tensor;

/// Role of a stored tensor. Decides trainability and weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Convolution or linear kernel.
    Weight,
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// Only kernels are decayed; biases and normalization affine terms are not.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Weight)
    }

    pub fn code(self) -> u8 {
        match self {
            ParamKind::Weight => 0,
            ParamKind::Bias => 1,
            ParamKind::NormScale => 2,
            ParamKind::NormShift => 3,
            ParamKind::RunningMean => 4,
            ParamKind::RunningVar => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => ParamKind::Weight,
            1 => ParamKind::Bias,
            2 => ParamKind::NormScale,
            3 => ParamKind::NormShift,
            4 => ParamKind::RunningMean,
            5 => ParamKind::RunningVar,
            _ => return None,
        })
    }
}

struct ParamInner {
    name: String,
    kind: ParamKind,
    value: RwLock<Tensor>,
    grad: Mutex<Option<Tensor>>,
}

/// Shared handle to a named model tensor plus its accumulated gradient.
#[derive(Clone)]
pub struct Param(Arc<ParamInner>);

impl std::fmt::Debug for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Param")
            .field("name", &self.0.name)
            .field("kind", &self.0.kind)
            .field("shape", &self.value().shape())
            .finish()
    }
}

impl Param {
    pub fn new(name: impl Into<String>, kind: ParamKind, value: Tensor) -> Self {
        Self(Arc::new(ParamInner {
            name: name.into(),
            kind,
            value: RwLock::new(value),
            grad: Mutex::new(None),
        }))
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    pub fn kind(&self) -> ParamKind {
        self.0.kind
    }

    pub fn value(&self) -> RwLockReadGuard<'_, Tensor> {
        self.0.value.read().expect("param lock poisoned")
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value().numel()
    }

    pub fn set_value(&self, value: Tensor) {
        *self.0.value.write().expect("param lock poisoned") = value;
    }

    pub fn update(&self, f: impl FnOnce(&mut Tensor)) {
        f(&mut self.0.value.write().expect("param lock poisoned"));
    }

    /// Leaf variable holding a snapshot of the current value. When `track` is
    /// set, gradients reaching the leaf are accumulated into this parameter.
    pub fn var(&self, track: bool) -> Var {
        let value = self.value().clone();
        if track && self.kind().trainable() {
            Var::param_leaf(value, self.clone())
        } else {
            Var::constant(value)
        }
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn take_grad(&self) -> Option<Tensor> {
        self.0.grad.lock().expect("grad lock poisoned").take()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &Tensor) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.add_assign(g),
            None => *slot = Some(g.clone()),
        }
    }

    pub fn ptr_eq(&self, other: &Param) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}
