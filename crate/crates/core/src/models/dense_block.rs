use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::nn::{Conv1d, Dropout, Lstm, Mode, Module, NnError, Param, Relu, Scalar, Tensor, LayerKind};

/// One inner layer of a dense block: LSTM over the sequence, kernel-2 conv,
/// ReLU and dropout, emitting `growth` channels at the same length.
#[derive(Debug, Clone)]
pub struct DenseUnit<T> {
    lstm: Lstm<T>,
    conv: Conv1d<T>,
    relu: Relu,
    dropout: Dropout<T>,
}

impl<T: Scalar> DenseUnit<T> {
    fn new<R: Rng + ?Sized>(input: usize, growth: usize, keep: f64, rng: &mut R) -> Result<Self, NnError> {
        Ok(Self {
            lstm: Lstm::new(input, growth, rng)?,
            conv: Conv1d::new(growth, growth, 2, 1, rng)?,
            relu: Relu::new(),
            dropout: Dropout::new(keep)?,
        })
    }

    pub fn input_channels(&self) -> usize {
        self.lstm.input_size()
    }

    fn forward(&mut self, x: &Tensor<T>, mode: &mut Mode<'_>) -> Result<Tensor<T>, NnError> {
        let h = self.lstm.forward(x, mode)?;
        let h = self.conv.forward(&h, mode)?;
        let h = self.relu.forward(&h)?;
        self.dropout.forward(&h, mode)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let g = self.dropout.backward(grad)?;
        let g = self.relu.backward(&g)?;
        let g = self.conv.backward(&g)?;
        self.lstm.backward(&g)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(Param<'_, T>)) {
        for (value, grad) in self.lstm.params() {
            f(Param { kind: LayerKind::Lstm, value, grad });
        }
        for (value, grad) in self.conv.params() {
            f(Param { kind: LayerKind::Conv1d, value, grad });
        }
    }
}

/// Densely connected block: inner layer `j` sees the channel-wise
/// concatenation of the block input and the outputs of layers `1..j`, and the
/// block emits the concatenation of all of them.
#[derive(Debug, Clone)]
pub struct DenseBlock<T> {
    base_channels: usize,
    growth: usize,
    units: Vec<DenseUnit<T>>,
    cache: Option<(usize, usize)>,
}

fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let (batch, len, ca) = a.dims3()?;
    let (_, _, cb) = b.dims3()?;
    let c = ca + cb;
    let mut out = Vec::with_capacity(batch * len * c);
    for (ra, rb) in a.data().chunks_exact(ca).zip(b.data().chunks_exact(cb)) {
        out.extend_from_slice(ra);
        out.extend_from_slice(rb);
    }
    Tensor::from_vec(&[batch, len, c], out)
}

impl<T: Scalar> DenseBlock<T> {
    pub fn new<R: Rng + ?Sized>(
        base_channels: usize,
        growth: usize,
        layers: usize,
        dropout_keep: f64,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        if base_channels == 0 || growth == 0 || layers == 0 {
            return Err(NnError::BadConfig("dense block sizes must be positive"));
        }
        let units = (0..layers)
            .map(|j| DenseUnit::new(base_channels + j * growth, growth, dropout_keep, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            base_channels,
            growth,
            units,
            cache: None,
        })
    }

    pub fn base_channels(&self) -> usize {
        self.base_channels
    }

    pub fn growth(&self) -> usize {
        self.growth
    }

    pub fn layer_count(&self) -> usize {
        self.units.len()
    }

    pub fn units(&self) -> &[DenseUnit<T>] {
        &self.units
    }

    pub fn output_channels(&self) -> usize {
        self.base_channels + self.units.len() * self.growth
    }

    /// Forward pass that replaces inner layer `ablate`'s output with zeros
    /// before it is concatenated.
    pub fn forward_ablated(
        &mut self,
        x: &Tensor<T>,
        mode: &mut Mode<'_>,
        ablate: Option<usize>,
    ) -> Result<Tensor<T>, NnError> {
        let (batch, len, ch) = x.dims3()?;
        if ch != self.base_channels {
            return Err(NnError::ShapeMismatch {
                what: "dense block input channels",
                expected: self.base_channels,
                found: ch,
            });
        }
        let mut features = x.clone();
        for (j, unit) in self.units.iter_mut().enumerate() {
            let mut out = unit.forward(&features, mode)?;
            if ablate == Some(j) {
                out.fill(T::zero());
            }
            features = concat_channels(&features, &out)?;
        }
        self.cache = Some((batch, len));
        Ok(features)
    }
}

impl<T: Scalar> Module<T> for DenseBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: &mut Mode<'_>) -> Result<Tensor<T>, NnError> {
        self.forward_ablated(x, mode, None)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (batch, len) = self.cache.ok_or(NnError::NoForwardCache)?;
        let total = self.output_channels();
        if grad.shape() != [batch, len, total] {
            return Err(NnError::ShapeMismatch {
                what: "dense block output gradient",
                expected: batch * len * total,
                found: grad.len(),
            });
        }
        // gradient w.r.t. every concatenated slice, filled in from the back
        let mut acc = grad.data().to_vec();
        let rows = batch * len;
        for (j, unit) in self.units.iter_mut().enumerate().rev() {
            let in_ch = self.base_channels + j * self.growth;
            let mut slice = vec![T::zero(); rows * self.growth];
            for r in 0..rows {
                slice[r * self.growth..(r + 1) * self.growth]
                    .copy_from_slice(&acc[r * total + in_ch..r * total + in_ch + self.growth]);
            }
            let dx = unit.backward(&Tensor::from_vec(&[batch, len, self.growth], slice)?)?;
            for (r, src) in dx.data().chunks_exact(in_ch).enumerate() {
                for (a, &v) in acc[r * total..r * total + in_ch].iter_mut().zip(src) {
                    *a += v;
                }
            }
        }
        let base = self.base_channels;
        let mut dx = Vec::with_capacity(rows * base);
        for r in 0..rows {
            dx.extend_from_slice(&acc[r * total..r * total + base]);
        }
        Tensor::from_vec(&[batch, len, base], dx)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(Param<'_, T>)) {
        for unit in &mut self.units {
            unit.visit_params(f);
        }
    }

    fn activation_pattern(&self, out: &mut Vec<bool>) {
        for unit in &self.units {
            out.extend_from_slice(unit.relu.mask().unwrap_or(&[]));
        }
    }
}
