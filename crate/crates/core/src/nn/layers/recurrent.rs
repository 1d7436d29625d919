use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::nn::linalg::{add_col_sums, gemm, gemm_nt, gemm_tn, transpose};
use crate::nn::{uniform_init, Mode, NnError, Scalar, Tensor};

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn check_input<T: Scalar>(x: &Tensor<T>, input: usize, what: &'static str) -> Result<(usize, usize), NnError> {
    let (b, l, c) = x.dims3()?;
    if c != input {
        return Err(NnError::ShapeMismatch {
            what,
            expected: input,
            found: c,
        });
    }
    Ok((b, l))
}

/// LSTM layer run over the whole sequence from zero initial state, emitting
/// the hidden state at every step. Gate blocks are ordered input, forget,
/// candidate, output.
#[derive(Debug, Clone)]
pub struct Lstm<T> {
    input: usize,
    hidden: usize,
    /// `[input, 4 * hidden]`
    w_x: Tensor<T>,
    /// `[hidden, 4 * hidden]`
    w_h: Tensor<T>,
    bias: Tensor<T>,
    w_x_grad: Tensor<T>,
    w_h_grad: Tensor<T>,
    bias_grad: Tensor<T>,
    cache: Option<LstmCache<T>>,
}

#[derive(Debug, Clone)]
struct LstmCache<T> {
    batch: usize,
    len: usize,
    x: Vec<T>,
    /// Activated gates, `[batch * len, 4 * hidden]`.
    gates: Vec<T>,
    cells: Vec<T>,
    tanh_cells: Vec<T>,
    hidden: Vec<T>,
}

impl<T: Scalar> Lstm<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Result<Self, NnError> {
        let fan_in = input + hidden;
        let w_x = uniform_init(&[input, 4 * hidden], fan_in, rng);
        let w_h = uniform_init(&[hidden, 4 * hidden], fan_in, rng);
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(T::one());
        Self::from_weights(input, hidden, w_x, w_h, bias)
    }

    pub fn from_weights(
        input: usize,
        hidden: usize,
        w_x: Tensor<T>,
        w_h: Tensor<T>,
        bias: Tensor<T>,
    ) -> Result<Self, NnError> {
        if input == 0 || hidden == 0 {
            return Err(NnError::BadConfig("lstm sizes must be positive"));
        }
        let g = 4 * hidden;
        for (t, shape, what) in [
            (&w_x, [input, g].as_slice(), "lstm input weights"),
            (&w_h, [hidden, g].as_slice(), "lstm recurrent weights"),
            (&bias, [g].as_slice(), "lstm bias"),
        ] {
            if t.shape() != shape {
                return Err(NnError::ShapeMismatch {
                    what,
                    expected: shape.iter().product(),
                    found: t.len(),
                });
            }
        }
        Ok(Self {
            input,
            hidden,
            w_x_grad: Tensor::zeros(w_x.shape()),
            w_h_grad: Tensor::zeros(w_h.shape()),
            bias_grad: Tensor::zeros(bias.shape()),
            w_x,
            w_h,
            bias,
            cache: None,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    pub(crate) fn params(&mut self) -> [(&mut Tensor<T>, &mut Tensor<T>); 3] {
        [
            (&mut self.w_x, &mut self.w_x_grad),
            (&mut self.w_h, &mut self.w_h_grad),
            (&mut self.bias, &mut self.bias_grad),
        ]
    }

    pub fn forward(&mut self, x: &Tensor<T>, _mode: &mut Mode<'_>) -> Result<Tensor<T>, NnError> {
        let (batch, len) = check_input(x, self.input, "lstm input channels")?;
        let h = self.hidden;
        let g4 = 4 * h;
        let rows = batch * len;

        let mut xp = vec![T::zero(); rows * g4];
        gemm(rows, self.input, g4, x.data(), self.w_x.data(), &mut xp);

        let mut gates = vec![T::zero(); rows * g4];
        let mut cells = vec![T::zero(); rows * h];
        let mut tanh_cells = vec![T::zero(); rows * h];
        let mut hidden = vec![T::zero(); rows * h];
        let mut h_prev = vec![T::zero(); batch * h];
        let mut c_prev = vec![T::zero(); batch * h];
        let mut z = vec![T::zero(); batch * g4];
        let bias = self.bias.data();

        for t in 0..len {
            for b in 0..batch {
                let src = &xp[(b * len + t) * g4..(b * len + t + 1) * g4];
                for ((zv, &xv), &bv) in z[b * g4..(b + 1) * g4].iter_mut().zip(src).zip(bias) {
                    *zv = xv + bv;
                }
            }
            if t > 0 {
                gemm(batch, h, g4, &h_prev, self.w_h.data(), &mut z);
            }
            for b in 0..batch {
                let r = b * len + t;
                let zb = &z[b * g4..(b + 1) * g4];
                let gb = &mut gates[r * g4..(r + 1) * g4];
                for j in 0..h {
                    let i = sigmoid(zb[j]);
                    let f = sigmoid(zb[h + j]);
                    let gc = zb[2 * h + j].tanh();
                    let o = sigmoid(zb[3 * h + j]);
                    gb[j] = i;
                    gb[h + j] = f;
                    gb[2 * h + j] = gc;
                    gb[3 * h + j] = o;
                    let c = f * c_prev[b * h + j] + i * gc;
                    let tc = c.tanh();
                    let hv = o * tc;
                    cells[r * h + j] = c;
                    tanh_cells[r * h + j] = tc;
                    hidden[r * h + j] = hv;
                    c_prev[b * h + j] = c;
                    h_prev[b * h + j] = hv;
                }
            }
        }

        let out = Tensor::from_vec(&[batch, len, h], hidden.clone())?;
        self.cache = Some(LstmCache {
            batch,
            len,
            x: x.data().to_vec(),
            gates,
            cells,
            tanh_cells,
            hidden,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache)?;
        let (batch, len, h) = (cache.batch, cache.len, self.hidden);
        let g4 = 4 * h;
        let rows = batch * len;
        if grad.shape() != [batch, len, h] {
            return Err(NnError::ShapeMismatch {
                what: "lstm output gradient",
                expected: rows * h,
                found: grad.len(),
            });
        }
        let gd = grad.data();
        let one = T::one();
        let w_h_t = transpose(h, g4, self.w_h.data());

        let mut dz_all = vec![T::zero(); rows * g4];
        let mut dzt = vec![T::zero(); batch * g4];
        let mut dh_next = vec![T::zero(); batch * h];
        let mut dc_next = vec![T::zero(); batch * h];
        let mut h_prev = vec![T::zero(); batch * h];

        for t in (0..len).rev() {
            for b in 0..batch {
                let r = b * len + t;
                let gb = &cache.gates[r * g4..(r + 1) * g4];
                for j in 0..h {
                    let idx = r * h + j;
                    let (i, f, gc, o) = (gb[j], gb[h + j], gb[2 * h + j], gb[3 * h + j]);
                    let tc = cache.tanh_cells[idx];
                    let c_prev = if t > 0 { cache.cells[idx - h] } else { T::zero() };
                    let dh = gd[idx] + dh_next[b * h + j];
                    let dc = dh * o * (one - tc * tc) + dc_next[b * h + j];
                    dc_next[b * h + j] = dc * f;
                    let dzb = &mut dzt[b * g4..(b + 1) * g4];
                    dzb[j] = dc * gc * i * (one - i);
                    dzb[h + j] = dc * c_prev * f * (one - f);
                    dzb[2 * h + j] = dc * i * (one - gc * gc);
                    dzb[3 * h + j] = dh * tc * o * (one - o);
                }
                dz_all[r * g4..(r + 1) * g4].copy_from_slice(&dzt[b * g4..(b + 1) * g4]);
            }
            dh_next.fill(T::zero());
            if t > 0 {
                for b in 0..batch {
                    let r = b * len + t - 1;
                    h_prev[b * h..(b + 1) * h].copy_from_slice(&cache.hidden[r * h..(r + 1) * h]);
                }
                gemm_tn(h, batch, g4, &h_prev, &dzt, self.w_h_grad.data_mut());
                gemm(batch, g4, h, &dzt, &w_h_t, &mut dh_next);
            }
        }

        gemm_tn(self.input, rows, g4, &cache.x, &dz_all, self.w_x_grad.data_mut());
        add_col_sums(&dz_all, self.bias_grad.data_mut());
        let mut dx = vec![T::zero(); rows * self.input];
        gemm_nt(rows, g4, self.input, &dz_all, self.w_x.data(), &mut dx);
        Tensor::from_vec(&[batch, len, self.input], dx)
    }
}

/// Elman recurrent layer, `h_t = tanh(x_t W_x + h_{t-1} W_h + b)`, emitting
/// every hidden state.
#[derive(Debug, Clone)]
pub struct Rnn<T> {
    input: usize,
    hidden: usize,
    w_x: Tensor<T>,
    w_h: Tensor<T>,
    bias: Tensor<T>,
    w_x_grad: Tensor<T>,
    w_h_grad: Tensor<T>,
    bias_grad: Tensor<T>,
    cache: Option<RnnCache<T>>,
}

#[derive(Debug, Clone)]
struct RnnCache<T> {
    batch: usize,
    len: usize,
    x: Vec<T>,
    hidden: Vec<T>,
}

impl<T: Scalar> Rnn<T> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Result<Self, NnError> {
        let fan_in = input + hidden;
        let w_x = uniform_init(&[input, hidden], fan_in, rng);
        let w_h = uniform_init(&[hidden, hidden], fan_in, rng);
        Self::from_weights(input, hidden, w_x, w_h, Tensor::zeros(&[hidden]))
    }

    pub fn from_weights(
        input: usize,
        hidden: usize,
        w_x: Tensor<T>,
        w_h: Tensor<T>,
        bias: Tensor<T>,
    ) -> Result<Self, NnError> {
        if input == 0 || hidden == 0 {
            return Err(NnError::BadConfig("rnn sizes must be positive"));
        }
        if w_x.shape() != [input, hidden] || w_h.shape() != [hidden, hidden] || bias.shape() != [hidden] {
            return Err(NnError::ShapeMismatch {
                what: "rnn parameters",
                expected: input * hidden + hidden * hidden + hidden,
                found: w_x.len() + w_h.len() + bias.len(),
            });
        }
        Ok(Self {
            input,
            hidden,
            w_x_grad: Tensor::zeros(w_x.shape()),
            w_h_grad: Tensor::zeros(w_h.shape()),
            bias_grad: Tensor::zeros(bias.shape()),
            w_x,
            w_h,
            bias,
            cache: None,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub(crate) fn params(&mut self) -> [(&mut Tensor<T>, &mut Tensor<T>); 3] {
        [
            (&mut self.w_x, &mut self.w_x_grad),
            (&mut self.w_h, &mut self.w_h_grad),
            (&mut self.bias, &mut self.bias_grad),
        ]
    }

    pub fn forward(&mut self, x: &Tensor<T>, _mode: &mut Mode<'_>) -> Result<Tensor<T>, NnError> {
        let (batch, len) = check_input(x, self.input, "rnn input channels")?;
        let h = self.hidden;
        let rows = batch * len;
        let mut xp = vec![T::zero(); rows * h];
        gemm(rows, self.input, h, x.data(), self.w_x.data(), &mut xp);
        let mut hidden = vec![T::zero(); rows * h];
        let mut h_prev = vec![T::zero(); batch * h];
        let mut z = vec![T::zero(); batch * h];
        let bias = self.bias.data();
        for t in 0..len {
            for b in 0..batch {
                let src = &xp[(b * len + t) * h..(b * len + t + 1) * h];
                for ((zv, &xv), &bv) in z[b * h..(b + 1) * h].iter_mut().zip(src).zip(bias) {
                    *zv = xv + bv;
                }
            }
            if t > 0 {
                gemm(batch, h, h, &h_prev, self.w_h.data(), &mut z);
            }
            for b in 0..batch {
                let r = b * len + t;
                for j in 0..h {
                    let v = z[b * h + j].tanh();
                    hidden[r * h + j] = v;
                    h_prev[b * h + j] = v;
                }
            }
        }
        let out = Tensor::from_vec(&[batch, len, h], hidden.clone())?;
        self.cache = Some(RnnCache {
            batch,
            len,
            x: x.data().to_vec(),
            hidden,
        });
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForwardCache)?;
        let (batch, len, h) = (cache.batch, cache.len, self.hidden);
        let rows = batch * len;
        if grad.shape() != [batch, len, h] {
            return Err(NnError::ShapeMismatch {
                what: "rnn output gradient",
                expected: rows * h,
                found: grad.len(),
            });
        }
        let gd = grad.data();
        let w_h_t = transpose(h, h, self.w_h.data());
        let mut dz_all = vec![T::zero(); rows * h];
        let mut dzt = vec![T::zero(); batch * h];
        let mut dh_next = vec![T::zero(); batch * h];
        let mut h_prev = vec![T::zero(); batch * h];
        for t in (0..len).rev() {
            for b in 0..batch {
                let r = b * len + t;
                for j in 0..h {
                    let idx = r * h + j;
                    let hv = cache.hidden[idx];
                    let dz = (gd[idx] + dh_next[b * h + j]) * (T::one() - hv * hv);
                    dzt[b * h + j] = dz;
                    dz_all[idx] = dz;
                }
            }
            dh_next.fill(T::zero());
            if t > 0 {
                for b in 0..batch {
                    let r = b * len + t - 1;
                    h_prev[b * h..(b + 1) * h].copy_from_slice(&cache.hidden[r * h..(r + 1) * h]);
                }
                gemm_tn(h, batch, h, &h_prev, &dzt, self.w_h_grad.data_mut());
                gemm(batch, h, h, &dzt, &w_h_t, &mut dh_next);
            }
        }
        gemm_tn(self.input, rows, h, &cache.x, &dz_all, self.w_x_grad.data_mut());
        add_col_sums(&dz_all, self.bias_grad.data_mut());
        let mut dx = vec![T::zero(); rows * self.input];
        gemm_nt(rows, h, self.input, &dz_all, self.w_x.data(), &mut dx);
        Tensor::from_vec(&[batch, len, self.input], dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_output() {
        let mut lstm = Lstm::<f64>::from_weights(
            3,
            4,
            Tensor::zeros(&[3, 16]),
            Tensor::zeros(&[4, 16]),
            Tensor::zeros(&[16]),
        )
        .unwrap();
        let x = Tensor::from_vec(&[1, 5, 3], (0..15).map(|v| v as f64).collect()).unwrap();
        let y = lstm.forward(&x, &mut Mode::Infer).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let mut rnn =
            Rnn::<f64>::from_weights(3, 4, Tensor::zeros(&[3, 4]), Tensor::zeros(&[4, 4]), Tensor::zeros(&[4]))
                .unwrap();
        let y = rnn.forward(&x, &mut Mode::Infer).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_closed_form() {
        // one input, one unit: gate pre-activations are w_x * x + b
        let (wi, wf, wg, wo) = (0.5, -0.3, 0.8, 1.2);
        let (bi, bf, bg, bo) = (0.1, 1.0, -0.2, 0.05);
        let x = 0.7;
        let mut lstm = Lstm::<f64>::from_weights(
            1,
            1,
            Tensor::from_vec(&[1, 4], vec![wi, wf, wg, wo]).unwrap(),
            Tensor::from_vec(&[1, 4], vec![9.0, 9.0, 9.0, 9.0]).unwrap(),
            Tensor::from_vec(&[4], vec![bi, bf, bg, bo]).unwrap(),
        )
        .unwrap();
        let y = lstm
            .forward(&Tensor::from_vec(&[1, 1, 1], vec![x]).unwrap(), &mut Mode::Infer)
            .unwrap();
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = s(wi * x + bi);
        let g = (wg * x + bg).tanh();
        let o = s(wo * x + bo);
        // c_0 = 0, so the forget gate drops out
        let expected = o * (i * g).tanh();
        assert!((y.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lstm = Lstm::<f64>::new(3, 5, &mut rng).unwrap();
        let b = lstm.bias().data();
        assert!(b[5..10].iter().all(|&v| v == 1.0));
        assert!(b[..5].iter().chain(&b[10..]).all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_len6_512() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lstm = Lstm::<f32>::new(8, 512, &mut rng).unwrap();
        let y = lstm.forward(&Tensor::zeros(&[1, 6, 8]), &mut Mode::Infer).unwrap();
        assert_eq!(y.shape(), &[1, 6, 512]);
    }
}
