use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::nn::linalg::{add_col_sums, add_row_bias, gemm, gemm_nt, gemm_tn};
use crate::nn::{uniform_init, Mode, NnError, Scalar, Tensor};

/// 1-D cross-correlation with "same" padding: the output has
/// `ceil(len / stride)` positions and any missing input on the right is zero.
#[derive(Debug, Clone)]
pub struct Conv1d<T> {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    /// `[kernel * in_channels, out_channels]`, row `k * in_channels + c`.
    weight: Tensor<T>,
    bias: Tensor<T>,
    weight_grad: Tensor<T>,
    bias_grad: Tensor<T>,
    cache: Option<ConvCache<T>>,
    corrupt_backward: bool,
}

#[derive(Debug, Clone)]
struct ConvCache<T> {
    cols: Vec<T>,
    batch: usize,
    in_len: usize,
}

pub fn same_out_len(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

impl<T: Scalar> Conv1d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let fan_in = kernel * in_channels;
        let weight = uniform_init(&[fan_in, out_channels], fan_in, rng);
        let bias = uniform_init(&[out_channels], fan_in, rng);
        Self::from_weights(in_channels, out_channels, kernel, stride, weight, bias)
    }

    pub fn from_weights(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        weight: Tensor<T>,
        bias: Tensor<T>,
    ) -> Result<Self, NnError> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
            return Err(NnError::BadConfig("conv dimensions and stride must be positive"));
        }
        if weight.shape() != [kernel * in_channels, out_channels] {
            return Err(NnError::ShapeMismatch {
                what: "conv weight",
                expected: kernel * in_channels * out_channels,
                found: weight.len(),
            });
        }
        if bias.shape() != [out_channels] {
            return Err(NnError::ShapeMismatch {
                what: "conv bias",
                expected: out_channels,
                found: bias.len(),
            });
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight_grad: Tensor::zeros(weight.shape()),
            bias_grad: Tensor::zeros(bias.shape()),
            weight,
            bias,
            cache: None,
            corrupt_backward: false,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn weight(&self) -> &Tensor<T> {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    /// Mutation hook for gradient-check negative controls: scatters input
    /// gradients one position too far.
    #[doc(hidden)]
    pub fn corrupt_backward(&mut self) {
        self.corrupt_backward = true;
    }

    pub(crate) fn params(&mut self) -> [(&mut Tensor<T>, &mut Tensor<T>); 2] {
        [
            (&mut self.weight, &mut self.weight_grad),
            (&mut self.bias, &mut self.bias_grad),
        ]
    }

    pub fn forward(&mut self, x: &Tensor<T>, _mode: &mut Mode<'_>) -> Result<Tensor<T>, NnError> {
        let (batch, len, ch) = x.dims3()?;
        if ch != self.in_channels {
            return Err(NnError::ShapeMismatch {
                what: "conv input channels",
                expected: self.in_channels,
                found: ch,
            });
        }
        let out_len = same_out_len(len, self.stride);
        let width = self.kernel * ch;
        let mut cols = vec![T::zero(); batch * out_len * width];
        let xd = x.data();
        for b in 0..batch {
            for o in 0..out_len {
                let row = &mut cols[(b * out_len + o) * width..(b * out_len + o + 1) * width];
                for k in 0..self.kernel {
                    let pos = o * self.stride + k;
                    if pos < len {
                        let src = &xd[(b * len + pos) * ch..(b * len + pos + 1) * ch];
                        row[k * ch..(k + 1) * ch].copy_from_slice(src);
                    }
                }
            }
        }
        let rows = batch * out_len;
        let mut out = vec![T::zero(); rows * self.out_channels];
        gemm(rows, width, self.out_channels, &cols, self.weight.data(), &mut out);
        add_row_bias(&mut out, self.bias.data());
        self.cache = Some(ConvCache {
            cols,
            batch,
            in_len: len,
        });
        Tensor::from_vec(&[batch, out_len, self.out_channels], out)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache)?;
        let (batch, len, ch) = (cache.batch, cache.in_len, self.in_channels);
        let out_len = same_out_len(len, self.stride);
        let rows = batch * out_len;
        if grad.shape() != [batch, out_len, self.out_channels] {
            return Err(NnError::ShapeMismatch {
                what: "conv output gradient",
                expected: rows * self.out_channels,
                found: grad.len(),
            });
        }
        let width = self.kernel * ch;
        let g = grad.data();
        gemm_tn(width, rows, self.out_channels, &cache.cols, g, self.weight_grad.data_mut());
        add_col_sums(g, self.bias_grad.data_mut());

        let mut dcols = vec![T::zero(); rows * width];
        gemm_nt(rows, self.out_channels, width, g, self.weight.data(), &mut dcols);
        let shift = usize::from(self.corrupt_backward);
        let mut dx = vec![T::zero(); batch * len * ch];
        for b in 0..batch {
            for o in 0..out_len {
                let row = &dcols[(b * out_len + o) * width..(b * out_len + o + 1) * width];
                for k in 0..self.kernel {
                    let pos = o * self.stride + k + shift;
                    if pos < len {
                        let dst = &mut dx[(b * len + pos) * ch..(b * len + pos + 1) * ch];
                        for (d, &v) in dst.iter_mut().zip(&row[k * ch..(k + 1) * ch]) {
                            *d += v;
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[batch, len, ch], dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_lengths() {
        assert_eq!(same_out_len(23, 2), 12);
        assert_eq!(same_out_len(12, 1), 12);
        assert_eq!(same_out_len(12, 2), 6);
    }

    #[test]
    fn hand_computed_stride_two() {
        let w = Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let mut conv = Conv1d::<f64>::from_weights(1, 1, 2, 2, w, b).unwrap();
        let x = Tensor::from_vec(&[1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv.forward(&x, &mut Mode::Infer).unwrap();
        assert_eq!(y.shape(), &[1, 2, 1]);
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn right_padding_on_odd_length() {
        let w = Tensor::from_vec(&[2, 1], vec![1.0, 10.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        let mut conv = Conv1d::<f64>::from_weights(1, 1, 2, 2, w, b).unwrap();
        let x = Tensor::from_vec(&[1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let y = conv.forward(&x, &mut Mode::Infer).unwrap();
        assert_eq!(y.data(), &[21.5, 3.5]);
    }

    #[test]
    fn table_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv1 = Conv1d::<f64>::new(1, 64, 2, 2, &mut rng).unwrap();
        let y = conv1.forward(&Tensor::zeros(&[3, 23, 1]), &mut Mode::Infer).unwrap();
        assert_eq!(y.shape(), &[3, 12, 64]);
        let mut pointwise = Conv1d::<f64>::new(64, 32, 1, 1, &mut rng).unwrap();
        let z = pointwise.forward(&y, &mut Mode::Infer).unwrap();
        assert_eq!(z.shape(), &[3, 12, 32]);
    }

    #[test]
    fn rejects_wrong_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv1d::<f64>::new(2, 4, 2, 1, &mut rng).unwrap();
        let err = conv.forward(&Tensor::zeros(&[1, 5, 3]), &mut Mode::Infer);
        assert!(matches!(err, Err(NnError::ShapeMismatch { .. })));
        assert!(Conv1d::<f64>::new(2, 4, 2, 0, &mut rng).is_err());
    }
}
