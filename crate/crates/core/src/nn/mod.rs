//! Numerical kernels for the behaviour detector.
//!
//! Every layer caches what its backward pass needs during `forward` and
//! accumulates parameter gradients during `backward`; there is no autodiff
//! graph. Activations are `[batch, length, channels]` tensors.

mod adam;
mod gradcheck;
mod layers;
pub mod linalg;
mod loss;
mod tensor;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport, KindError};
pub use layers::{
    same_out_len, AvgPool, Conv1d, Dense, Dropout, Flatten, LastStep, Layer, Lstm, Relu, Rnn,
    Sequential,
};
pub use loss::{cross_entropy, softmax, LabelMatrix};
pub use tensor::{Scalar, Tensor};

use rand::{Rng, RngCore};

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch in {what}: expected {expected}, found {found}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("backward called before forward")]
    NoForwardCache,
    #[error("non-finite gradient in a {0:?} parameter")]
    NonFiniteGradient(LayerKind),
    #[error("bad configuration: {0}")]
    BadConfig(&'static str),
}

/// Whether a forward pass is part of training. Only dropout cares.
pub enum Mode<'a> {
    Infer,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Layer type tags. The numeric values are part of the checkpoint format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[repr(u8)]
pub enum LayerKind {
    Conv1d = 1,
    Lstm = 2,
    AvgPool = 3,
    Dense = 4,
    Relu = 5,
    Dropout = 6,
    Flatten = 7,
    Rnn = 8,
    LastStep = 9,
}

impl LayerKind {
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            1 => Self::Conv1d,
            2 => Self::Lstm,
            3 => Self::AvgPool,
            4 => Self::Dense,
            5 => Self::Relu,
            6 => Self::Dropout,
            7 => Self::Flatten,
            8 => Self::Rnn,
            9 => Self::LastStep,
            _ => return None,
        })
    }
}

/// Mutable view of one parameter tensor and its gradient accumulator.
pub struct Param<'a, T> {
    pub kind: LayerKind,
    pub value: &'a mut Tensor<T>,
    pub grad: &'a mut Tensor<T>,
}

/// A differentiable stage: a single layer, a block of layers or a network.
pub trait Module<T: Scalar> {
    fn forward(&mut self, x: &Tensor<T>, mode: &mut Mode<'_>) -> Result<Tensor<T>, NnError>;

    /// Back-propagates `grad` (same shape as the last forward output),
    /// accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError>;

    /// Visits every parameter in a fixed order.
    fn visit_params(&mut self, f: &mut dyn FnMut(Param<'_, T>));

    /// Appends the on/off state of every rectifier from the last forward pass.
    fn activation_pattern(&self, _out: &mut alloc::vec::Vec<bool>) {}

    fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.grad.fill(T::zero()));
    }

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }
}

/// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn uniform_init<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = 1.0 / num_traits::Float::sqrt(fan_in.max(1) as f64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}
