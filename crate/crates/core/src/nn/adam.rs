use alloc::vec::Vec;

use super::{Module, NnError, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coefficient added to the gradient before the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Moment accumulators for every parameter tensor, in visiting order.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

/// One Adam update of `param` in place, for step number `step` (1-based).
pub fn adam_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    first: &mut [T],
    second: &mut [T],
    step: u64,
    config: &AdamConfig,
) {
    let b1 = T::of(config.beta1);
    let b2 = T::of(config.beta2);
    let one = T::one();
    let wd = T::of(config.weight_decay);
    let eps = T::of(config.epsilon);
    let correction1 = 1.0 - powi(config.beta1, step);
    let correction2 = 1.0 - powi(config.beta2, step);
    let lr = T::of(config.learning_rate);
    let inv_c1 = T::of(1.0 / correction1);
    let inv_c2 = T::of(1.0 / correction2);
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(first.iter_mut()).zip(second.iter_mut()) {
        let g = g + wd * *p;
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m * inv_c1;
        let v_hat = *v * inv_c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

fn powi(base: f64, exp: u64) -> f64 {
    num_traits::Float::powi(base, exp.min(i32::MAX as u64) as i32)
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn ensure_slot(&mut self, index: usize, shape: &[usize]) -> Result<(), NnError> {
        if index == self.first.len() {
            self.first.push(Tensor::zeros(shape));
            self.second.push(Tensor::zeros(shape));
        }
        if self.first[index].shape() != shape {
            return Err(NnError::ShapeMismatch {
                what: "adam moment",
                expected: self.first[index].len(),
                found: shape.iter().product(),
            });
        }
        Ok(())
    }

    /// Updates explicit parameter tensors from their gradients.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<(), NnError> {
        if params.len() != grads.len() {
            return Err(NnError::ShapeMismatch {
                what: "adam gradient count",
                expected: params.len(),
                found: grads.len(),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(NnError::ShapeMismatch {
                    what: "adam gradient",
                    expected: p.len(),
                    found: g.len(),
                });
            }
            self.ensure_slot(i, p.shape())?;
        }
        self.step += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            adam_update(
                p.data_mut(),
                g.data(),
                self.first[i].data_mut(),
                self.second[i].data_mut(),
                self.step,
                &self.config,
            );
        }
        Ok(())
    }

    /// Updates every parameter of `module` from its accumulated gradients.
    pub fn step_module<M: Module<T> + ?Sized>(&mut self, module: &mut M) -> Result<(), NnError> {
        let mut result = Ok(());
        let mut index = 0;
        let step = self.step + 1;
        module.visit_params(&mut |p| {
            if result.is_err() {
                return;
            }
            if let Err(e) = self.ensure_slot(index, p.value.shape()) {
                result = Err(e);
                return;
            }
            adam_update(
                p.value.data_mut(),
                p.grad.data(),
                self.first[index].data_mut(),
                self.second[index].data_mut(),
                step,
                &self.config,
            );
            index += 1;
        });
        result?;
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let mut st = AdamState::new(AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        });
        let mut p = vec![scalar(1.5)];
        for _ in 0..3 {
            st.step(&mut p, &[scalar(0.0)]).unwrap();
        }
        assert_eq!(p[0].data(), &[1.5]);
        assert_eq!(st.step_count(), 3);
    }

    #[test]
    fn single_step_closed_form() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(cfg);
        let mut p = vec![scalar(1.0)];
        st.step(&mut p, &[scalar(1.0)]).unwrap();
        // m_hat = v_hat = g = 1 after bias correction
        let expected = 1.0 - 1e-5 / (1.0 + 1e-8);
        assert!((p[0].data()[0] - expected).abs() < 1e-16);
    }

    #[test]
    fn weight_decay_shrinks_params() {
        let mut st = AdamState::new(AdamConfig::default());
        let mut p = vec![scalar(1.0)];
        st.step(&mut p, &[scalar(0.0)]).unwrap();
        assert!(p[0].data()[0] < 1.0);
    }

    #[test]
    fn shape_mismatch() {
        let mut st = AdamState::<f64>::new(AdamConfig::default());
        let mut p = vec![scalar(1.0)];
        assert!(st.step(&mut p, &[Tensor::zeros(&[2])]).is_err());
        assert!(st.step(&mut p, &[]).is_err());
    }
}
