use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::nn::linalg::{add_col_sums, add_row_bias, gemm, gemm_nt, gemm_tn};
use crate::nn::{uniform_init, Mode, NnError, Scalar, Tensor};

/// Fully connected layer applied to the channel vector at every position.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    input: usize,
    output: usize,
    weight: Tensor<T>,
    bias: Tensor<T>,
    weight_grad: Tensor<T>,
    bias_grad: Tensor<T>,
    cache: Option<(Vec<usize>, Vec<T>)>,
}

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Result<Self, NnError> {
        let weight = uniform_init(&[input, output], input, rng);
        let bias = uniform_init(&[output], input, rng);
        Self::from_weights(input, output, weight, bias)
    }

    pub fn from_weights(
        input: usize,
        output: usize,
        weight: Tensor<T>,
        bias: Tensor<T>,
    ) -> Result<Self, NnError> {
        if input == 0 || output == 0 {
            return Err(NnError::BadConfig("dense sizes must be positive"));
        }
        if weight.shape() != [input, output] || bias.shape() != [output] {
            return Err(NnError::ShapeMismatch {
                what: "dense parameters",
                expected: input * output + output,
                found: weight.len() + bias.len(),
            });
        }
        Ok(Self {
            input,
            output,
            weight_grad: Tensor::zeros(weight.shape()),
            bias_grad: Tensor::zeros(bias.shape()),
            weight,
            bias,
            cache: None,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn output_size(&self) -> usize {
        self.output
    }

    pub(crate) fn params(&mut self) -> [(&mut Tensor<T>, &mut Tensor<T>); 2] {
        [
            (&mut self.weight, &mut self.weight_grad),
            (&mut self.bias, &mut self.bias_grad),
        ]
    }

    pub fn forward(&mut self, x: &Tensor<T>, _mode: &mut Mode<'_>) -> Result<Tensor<T>, NnError> {
        let (b, l, c) = x.dims3()?;
        if c != self.input {
            return Err(NnError::ShapeMismatch {
                what: "dense input features",
                expected: self.input,
                found: c,
            });
        }
        let rows = b * l;
        let mut out = vec![T::zero(); rows * self.output];
        gemm(rows, self.input, self.output, x.data(), self.weight.data(), &mut out);
        add_row_bias(&mut out, self.bias.data());
        self.cache = Some((x.shape().to_vec(), x.data().to_vec()));
        Tensor::from_vec(&[b, l, self.output], out)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (shape, x) = self.cache.as_ref().ok_or(NnError::NoForwardCache)?;
        let rows = shape[0] * shape[1];
        if grad.len() != rows * self.output {
            return Err(NnError::ShapeMismatch {
                what: "dense output gradient",
                expected: rows * self.output,
                found: grad.len(),
            });
        }
        gemm_tn(self.input, rows, self.output, x, grad.data(), self.weight_grad.data_mut());
        add_col_sums(grad.data(), self.bias_grad.data_mut());
        let mut dx = vec![T::zero(); rows * self.input];
        gemm_nt(rows, self.output, self.input, grad.data(), self.weight.data(), &mut dx);
        Tensor::from_vec(shape, dx)
    }
}
