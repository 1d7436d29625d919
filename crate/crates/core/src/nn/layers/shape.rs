//! Parameter-free layers: pooling, activations, dropout and reshapes.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::nn::{Mode, NnError, Scalar, Tensor};

/// Non-overlapping average pooling along the sequence axis; a ragged tail
/// window is averaged over its actual width.
#[derive(Debug, Clone)]
pub struct AvgPool {
    stride: usize,
    cache: Option<(usize, usize, usize)>,
}

impl AvgPool {
    pub fn new(stride: usize) -> Result<Self, NnError> {
        if stride == 0 {
            return Err(NnError::BadConfig("pool stride must be at least 1"));
        }
        Ok(Self { stride, cache: None })
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (b, l, c) = x.dims3()?;
        let out_len = l.div_ceil(self.stride);
        let mut out = vec![T::zero(); b * out_len * c];
        let xd = x.data();
        for bi in 0..b {
            for o in 0..out_len {
                let start = o * self.stride;
                let end = (start + self.stride).min(l);
                let scale = T::one() / T::of((end - start) as f64);
                let dst = &mut out[(bi * out_len + o) * c..(bi * out_len + o + 1) * c];
                for p in start..end {
                    for (d, &v) in dst.iter_mut().zip(&xd[(bi * l + p) * c..(bi * l + p + 1) * c]) {
                        *d += v;
                    }
                }
                dst.iter_mut().for_each(|d| *d *= scale);
            }
        }
        self.cache = Some((b, l, c));
        Tensor::from_vec(&[b, out_len, c], out)
    }

    pub fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (b, l, c) = self.cache.ok_or(NnError::NoForwardCache)?;
        let out_len = l.div_ceil(self.stride);
        if grad.len() != b * out_len * c {
            return Err(NnError::ShapeMismatch {
                what: "pool output gradient",
                expected: b * out_len * c,
                found: grad.len(),
            });
        }
        let g = grad.data();
        let mut dx = vec![T::zero(); b * l * c];
        for bi in 0..b {
            for o in 0..out_len {
                let start = o * self.stride;
                let end = (start + self.stride).min(l);
                let scale = T::one() / T::of((end - start) as f64);
                let src = &g[(bi * out_len + o) * c..(bi * out_len + o + 1) * c];
                for p in start..end {
                    for (d, &v) in dx[(bi * l + p) * c..(bi * l + p + 1) * c].iter_mut().zip(src) {
                        *d = v * scale;
                    }
                }
            }
        }
        Tensor::from_vec(&[b, l, c], dx)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
        let data = x
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m { v } else { T::zero() })
            .collect();
        self.mask = Some(mask);
        Tensor::from_vec(x.shape(), data)
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mask = self.mask.as_ref().ok_or(NnError::NoForwardCache)?;
        if mask.len() != grad.len() {
            return Err(NnError::ShapeMismatch {
                what: "relu gradient",
                expected: mask.len(),
                found: grad.len(),
            });
        }
        let data = grad
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { T::zero() })
            .collect();
        Tensor::from_vec(grad.shape(), data)
    }
}

/// Inverted dropout: in training each element survives with probability
/// `keep` and is scaled by `1 / keep`; at inference it is the identity.
#[derive(Debug, Clone)]
pub struct Dropout<T> {
    keep: f64,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(keep: f64) -> Result<Self, NnError> {
        if !(keep > 0.0 && keep <= 1.0) {
            return Err(NnError::BadConfig("dropout keep probability must be in (0, 1]"));
        }
        Ok(Self { keep, mask: None })
    }

    pub fn keep(&self) -> f64 {
        self.keep
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: &mut Mode<'_>) -> Result<Tensor<T>, NnError> {
        match mode {
            Mode::Train(rng) if self.keep < 1.0 => {
                let scale = T::of(1.0 / self.keep);
                let mask: Vec<T> = (0..x.len())
                    .map(|_| if rng.gen_bool(self.keep) { scale } else { T::zero() })
                    .collect();
                let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
                self.mask = Some(mask);
                Tensor::from_vec(x.shape(), data)
            }
            _ => {
                self.mask = None;
                Ok(x.clone())
            }
        }
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        match &self.mask {
            Some(mask) => {
                let data = grad.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                Tensor::from_vec(grad.shape(), data)
            }
            None => Ok(grad.clone()),
        }
    }
}

/// `[batch, len, ch]` to `[batch, 1, len * ch]`.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (b, l, c) = x.dims3()?;
        self.shape = Some(x.shape().to_vec());
        x.clone().reshape(&[b, 1, l * c])
    }

    pub fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let shape = self.shape.as_ref().ok_or(NnError::NoForwardCache)?;
        grad.clone().reshape(shape)
    }
}

/// Keeps only the final position of a sequence: `[batch, len, ch]` to
/// `[batch, 1, ch]`.
#[derive(Debug, Clone, Default)]
pub struct LastStep {
    shape: Option<(usize, usize, usize)>,
}

impl LastStep {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (b, l, c) = x.dims3()?;
        if l == 0 {
            return Err(NnError::ShapeMismatch {
                what: "sequence length",
                expected: 1,
                found: 0,
            });
        }
        let mut out = Vec::with_capacity(b * c);
        for bi in 0..b {
            out.extend_from_slice(&x.data()[(bi * l + l - 1) * c..(bi * l + l) * c]);
        }
        self.shape = Some((b, l, c));
        Tensor::from_vec(&[b, 1, c], out)
    }

    pub fn backward<T: Scalar>(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (b, l, c) = self.shape.ok_or(NnError::NoForwardCache)?;
        if grad.len() != b * c {
            return Err(NnError::ShapeMismatch {
                what: "last-step gradient",
                expected: b * c,
                found: grad.len(),
            });
        }
        let mut dx = vec![T::zero(); b * l * c];
        for bi in 0..b {
            dx[(bi * l + l - 1) * c..(bi * l + l) * c].copy_from_slice(&grad.data()[bi * c..(bi + 1) * c]);
        }
        Tensor::from_vec(&[b, l, c], dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(values: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[1, values.len(), 1], values.to_vec()).unwrap()
    }

    #[test]
    fn avgpool_examples() {
        let mut p = AvgPool::new(2).unwrap();
        assert_eq!(p.forward(&seq(&[2.0, 4.0, 6.0, 8.0])).unwrap().data(), &[3.0, 7.0]);
        assert_eq!(p.forward(&seq(&[1.0, 2.0, 3.0])).unwrap().data(), &[1.5, 3.0]);
        let y = p.forward(&Tensor::<f64>::zeros(&[2, 12, 5])).unwrap();
        assert_eq!(y.shape(), &[2, 6, 5]);
        assert!(AvgPool::new(0).is_err());
    }

    #[test]
    fn avgpool_backward_spreads_evenly() {
        let mut p = AvgPool::new(2).unwrap();
        p.forward(&seq(&[1.0, 2.0, 3.0])).unwrap();
        let dx = p.backward(&seq(&[1.0, 1.0])).unwrap();
        assert_eq!(dx.data(), &[0.5, 0.5, 1.0]);
    }

    #[test]
    fn dropout_inference_is_identity() {
        let mut d = Dropout::<f64>::new(0.8).unwrap();
        let x = seq(&[1.0, -2.0, 3.0]);
        assert_eq!(d.forward(&x, &mut Mode::Infer).unwrap(), x);
        assert!(Dropout::<f64>::new(0.0).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut d = Dropout::<f64>::new(0.8).unwrap();
        let x = Tensor::from_vec(&[1, 20_000, 1], alloc::vec![1.0; 20_000]).unwrap();
        let y = d.forward(&x, &mut Mode::Train(&mut rng)).unwrap();
        let mean = y.data().iter().sum::<f64>() / 20_000.0;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
    }

    #[test]
    fn flatten_and_last_step() {
        let x = Tensor::from_vec(&[2, 3, 2], (0..12).map(f64::from).collect()).unwrap();
        let mut f = Flatten::new();
        assert_eq!(f.forward(&x).unwrap().shape(), &[2, 1, 6]);
        let mut s = LastStep::new();
        let y = s.forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0, 5.0, 10.0, 11.0]);
        let dx = s.backward(&y).unwrap();
        assert_eq!(dx.data()[4..6], [4.0, 5.0]);
        assert_eq!(dx.data()[0..4], [0.0; 4]);
    }

    #[test]
    fn relu_masks_negatives() {
        let mut r = Relu::new();
        let y = r.forward(&seq(&[-1.0, 0.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = r.backward(&seq(&[5.0, 5.0, 5.0])).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }
}
