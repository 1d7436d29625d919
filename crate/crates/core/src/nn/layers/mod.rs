mod conv;
mod dense;
mod recurrent;
mod shape;

use alloc::vec::Vec;

pub use conv::{same_out_len, Conv1d};
pub use dense::Dense;
pub use recurrent::{Lstm, Rnn};
pub use shape::{AvgPool, Dropout, Flatten, LastStep, Relu};

use super::{LayerKind, Mode, Module, NnError, Param, Scalar, Tensor};

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv1d(Conv1d<T>),
    Lstm(Lstm<T>),
    Rnn(Rnn<T>),
    AvgPool(AvgPool),
    Dense(Dense<T>),
    Relu(Relu),
    Dropout(Dropout<T>),
    Flatten(Flatten),
    LastStep(LastStep),
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv1d(_) => LayerKind::Conv1d,
            Layer::Lstm(_) => LayerKind::Lstm,
            Layer::Rnn(_) => LayerKind::Rnn,
            Layer::AvgPool(_) => LayerKind::AvgPool,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Relu(_) => LayerKind::Relu,
            Layer::Dropout(_) => LayerKind::Dropout,
            Layer::Flatten(_) => LayerKind::Flatten,
            Layer::LastStep(_) => LayerKind::LastStep,
        }
    }
}

impl<T: Scalar> Module<T> for Layer<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: &mut Mode<'_>) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv1d(l) => l.forward(x, mode),
            Layer::Lstm(l) => l.forward(x, mode),
            Layer::Rnn(l) => l.forward(x, mode),
            Layer::AvgPool(l) => l.forward(x),
            Layer::Dense(l) => l.forward(x, mode),
            Layer::Relu(l) => l.forward(x),
            Layer::Dropout(l) => l.forward(x, mode),
            Layer::Flatten(l) => l.forward(x),
            Layer::LastStep(l) => l.forward(x),
        }
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv1d(l) => l.backward(grad),
            Layer::Lstm(l) => l.backward(grad),
            Layer::Rnn(l) => l.backward(grad),
            Layer::AvgPool(l) => l.backward(grad),
            Layer::Dense(l) => l.backward(grad),
            Layer::Relu(l) => l.backward(grad),
            Layer::Dropout(l) => l.backward(grad),
            Layer::Flatten(l) => l.backward(grad),
            Layer::LastStep(l) => l.backward(grad),
        }
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(Param<'_, T>)) {
        let kind = self.kind();
        let mut emit = |pairs: &mut [(&mut Tensor<T>, &mut Tensor<T>)]| {
            for (value, grad) in pairs.iter_mut() {
                f(Param {
                    kind,
                    value,
                    grad,
                });
            }
        };
        match self {
            Layer::Conv1d(l) => emit(&mut l.params()),
            Layer::Lstm(l) => emit(&mut l.params()),
            Layer::Rnn(l) => emit(&mut l.params()),
            Layer::Dense(l) => emit(&mut l.params()),
            _ => {}
        }
    }

    fn activation_pattern(&self, out: &mut Vec<bool>) {
        if let Layer::Relu(r) = self {
            out.extend_from_slice(r.mask().unwrap_or(&[]));
        }
    }
}

/// Layers applied in order.
#[derive(Debug, Clone, Default)]
pub struct Sequential<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn push(&mut self, layer: Layer<T>) {
        self.layers.push(layer);
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }
}

impl<T: Scalar> Module<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: &mut Mode<'_>) -> Result<Tensor<T>, NnError> {
        let mut layers = self.layers.iter_mut();
        let Some(first) = layers.next() else {
            return Ok(x.clone());
        };
        let mut h = first.forward(x, mode)?;
        for layer in layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut g = grad.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(Param<'_, T>)) {
        for layer in &mut self.layers {
            layer.visit_params(f);
        }
    }

    fn activation_pattern(&self, out: &mut Vec<bool>) {
        for layer in &self.layers {
            layer.activation_pattern(out);
        }
    }
}
