//! Finite-difference verification of hand-written backward passes.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use super::{cross_entropy, softmax, LabelMatrix, LayerKind, Mode, Module, NnError, Tensor};

/// Worst relative error among the sampled entries of one parameter kind
/// (`kind == None` for the network input).
#[derive(Debug, Clone, PartialEq)]
pub struct KindError {
    pub kind: Option<LayerKind>,
    pub checked: usize,
    /// Draws discarded because every step straddled a ReLU kink.
    pub on_kink: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub per_kind: Vec<KindError>,
}

impl GradCheckReport {
    pub fn for_kind(&self, kind: Option<LayerKind>) -> Option<&KindError> {
        self.per_kind.iter().find(|k| k.kind == kind)
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

fn logits_of<M: Module<f64> + ?Sized>(net: &mut M, x: &Tensor<f64>) -> Result<Tensor<f64>, NnError> {
    net.forward(x, &mut Mode::Infer)
}

/// `L(plus) - L(minus)` for the summed cross-entropy, evaluated from logit
/// differences so the result keeps precision when the two losses agree in
/// nearly every digit:
/// `lse(a) - lse(b) = ln(1 + sum_i softmax(b)_i * expm1(a_i - b_i))`.
fn loss_difference(plus: &Tensor<f64>, minus: &Tensor<f64>, labels: &LabelMatrix) -> f64 {
    let classes = labels.classes();
    let probs = softmax(minus);
    plus.data()
        .chunks_exact(classes)
        .zip(minus.data().chunks_exact(classes))
        .zip(probs.data().chunks_exact(classes))
        .zip(labels.targets())
        .map(|(((a, b), p), &t)| {
            let growth: f64 = a.iter().zip(b).zip(p).map(|((x, y), q)| q * Float::exp_m1(x - y)).sum();
            Float::ln_1p(growth) - (a[t] - b[t])
        })
        .sum()
}

/// Ratio between successive steps of the extrapolation ladder.
const STEP_RATIO: f64 = 1.4;
/// Rungs of the ladder; the coarsest step is `epsilon * STEP_RATIO^(RUNGS-1)`.
const RUNGS: usize = 14;

/// Central-difference derivative refined by Richardson extrapolation over a
/// ladder of steps shrinking towards `epsilon` (Ridders' scheme).
///
/// `diff(h)` returns `(L(θ+h) - L(θ-h)) / 2h`, or `None` when some rectifier
/// changed state inside `[θ-h, θ+h]`. Steps that straddle a kink are skipped
/// from the top of the ladder; `None` means even `epsilon` straddles one.
fn extrapolated<F>(epsilon: f64, mut diff: F) -> Result<Option<f64>, NnError>
where
    F: FnMut(f64) -> Result<Option<f64>, NnError>,
{
    let ratio2 = STEP_RATIO * STEP_RATIO;
    let mut rung = RUNGS - 1;
    let first = loop {
        let h = epsilon * Float::powi(STEP_RATIO, rung as i32);
        if let Some(d) = diff(h)? {
            break d;
        }
        if rung == 0 {
            return Ok(None);
        }
        rung -= 1;
    };
    let mut table: Vec<Vec<f64>> = alloc::vec![alloc::vec![first]];
    let mut best = first;
    let mut err = f64::INFINITY;
    while rung > 0 {
        rung -= 1;
        let Some(d) = diff(epsilon * Float::powi(STEP_RATIO, rung as i32))? else {
            break;
        };
        let prev = table.last().expect("non-empty").clone();
        let mut row = alloc::vec![d];
        let mut fac = ratio2;
        for j in 1..=prev.len() {
            let v = (row[j - 1] * fac - prev[j - 1]) / (fac - 1.0);
            fac *= ratio2;
            let e = (v - row[j - 1]).abs().max((v - prev[j - 1]).abs());
            if e <= err {
                err = e;
                best = v;
            }
            row.push(v);
        }
        let i = row.len() - 1;
        let worse = (row[i] - prev[i - 1]).abs() >= 2.0 * err;
        table.push(row);
        if worse {
            break;
        }
    }
    Ok(Some(best))
}

/// Writes `value` into element `elem` of parameter `index`, returning the old value.
fn poke<M: Module<f64> + ?Sized>(net: &mut M, index: usize, elem: usize, value: f64) -> f64 {
    let mut i = 0;
    let mut old = 0.0;
    net.visit_params(&mut |p| {
        if i == index {
            old = p.value.data()[elem];
            p.value.data_mut()[elem] = value;
        }
        i += 1;
    });
    old
}

/// Forward pass that also reports whether the rectifier pattern still matches `base`.
fn probe<M: Module<f64> + ?Sized>(
    net: &mut M,
    x: &Tensor<f64>,
    base: &[bool],
    scratch: &mut Vec<bool>,
) -> Result<(Tensor<f64>, bool), NnError> {
    let logits = logits_of(net, x)?;
    scratch.clear();
    net.activation_pattern(scratch);
    Ok((logits, scratch.as_slice() == base))
}

/// Walks distinct random indices below `total` until `wanted` of them are
/// accepted by `check` or the range is exhausted. Returns (accepted, rejected).
fn sample_until<R, F>(total: usize, wanted: usize, rng: &mut R, mut check: F) -> Result<(usize, usize), NnError>
where
    R: Rng + ?Sized,
    F: FnMut(usize) -> Result<bool, NnError>,
{
    let mut tried = BTreeSet::new();
    let (mut accepted, mut rejected) = (0, 0);
    while accepted < wanted && tried.len() < total {
        let i = if total <= 4 * wanted {
            // dense regime: walk a random permutation instead of rejection sampling
            let rest: Vec<usize> = (0..total).filter(|i| !tried.contains(i)).collect();
            rest[rng.gen_range(0..rest.len())]
        } else {
            let i = rng.gen_range(0..total);
            if tried.contains(&i) {
                continue;
            }
            i
        };
        tried.insert(i);
        if check(i)? {
            accepted += 1;
        } else {
            rejected += 1;
        }
    }
    Ok((accepted, rejected))
}

/// Compares analytic gradients of the summed softmax cross-entropy against
/// central differences `(L(θ+h) - L(θ-h)) / 2h`.
///
/// Differences are taken on a ladder of steps ending at `epsilon` and
/// extrapolated to `h -> 0`. Steps over which some ReLU changes state are
/// discarded, since the loss is not differentiable across them; an entry whose
/// every step crosses a kink is replaced by a fresh draw and counted in
/// `KindError::on_kink`.
///
/// `samples_per_kind` entries are drawn for every parameter kind, plus the
/// same number of input entries. The network runs in inference mode, so
/// dropout is inactive.
pub fn grad_check<M: Module<f64> + ?Sized, R: Rng + ?Sized>(
    net: &mut M,
    input: &Tensor<f64>,
    labels: &LabelMatrix,
    epsilon: f64,
    samples_per_kind: usize,
    rng: &mut R,
) -> Result<GradCheckReport, NnError> {
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(NnError::BadConfig("epsilon must lie in [1e-7, 1e-4]"));
    }
    net.zero_grad();
    let out = net.forward(input, &mut Mode::Infer)?;
    let (_, grad) = cross_entropy(&out, labels)?;
    let input_grad = net.backward(&grad)?;
    let mut base = Vec::new();
    net.activation_pattern(&mut base);
    let mut scratch = Vec::new();

    let mut params: Vec<(LayerKind, Vec<f64>)> = Vec::new();
    net.visit_params(&mut |p| params.push((p.kind, p.grad.data().to_vec())));
    if let Some((kind, _)) = params.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(NnError::NonFiniteGradient(*kind));
    }
    if !input_grad.is_finite() {
        return Err(NnError::BadConfig("non-finite input gradient"));
    }

    let kinds: BTreeSet<LayerKind> = params.iter().map(|(k, _)| *k).collect();
    let mut per_kind = Vec::new();
    for kind in kinds {
        // flat index space over every tensor of this kind
        let owned: Vec<(usize, usize)> = params
            .iter()
            .enumerate()
            .filter(|(_, (k, _))| *k == kind)
            .map(|(i, (_, g))| (i, g.len()))
            .collect();
        let total: usize = owned.iter().map(|(_, n)| n).sum();
        let mut worst: f64 = 0.0;
        let (checked, on_kink) = sample_until(total, samples_per_kind, rng, |flat| {
            let mut rest = flat;
            let &(index, _) = owned
                .iter()
                .find(|(_, n)| {
                    if rest < *n {
                        true
                    } else {
                        rest -= n;
                        false
                    }
                })
                .expect("flat index in range");
            let elem = rest;
            let orig = poke(net, index, elem, 0.0);
            let numeric = extrapolated(epsilon, |h| {
                poke(net, index, elem, orig + h);
                let (plus, same_plus) = probe(net, input, &base, &mut scratch)?;
                poke(net, index, elem, orig - h);
                let (minus, same_minus) = probe(net, input, &base, &mut scratch)?;
                poke(net, index, elem, orig);
                Ok((same_plus && same_minus).then(|| loss_difference(&plus, &minus, labels) / (2.0 * h)))
            });
            poke(net, index, elem, orig);
            Ok(match numeric? {
                Some(n) => {
                    worst = worst.max(relative_error(params[index].1[elem], n));
                    true
                }
                None => false,
            })
        })?;
        per_kind.push(KindError {
            kind: Some(kind),
            checked,
            on_kink,
            max_rel_error: worst,
        });
    }

    let mut worst: f64 = 0.0;
    let mut x = input.clone();
    let mut x_minus = input.clone();
    let (checked, on_kink) = sample_until(input.len(), samples_per_kind, rng, |i| {
        let orig = input.data()[i];
        let numeric = extrapolated(epsilon, |h| {
            x.data_mut()[i] = orig + h;
            x_minus.data_mut()[i] = orig - h;
            let (plus, same_plus) = probe(net, &x, &base, &mut scratch)?;
            let (minus, same_minus) = probe(net, &x_minus, &base, &mut scratch)?;
            Ok((same_plus && same_minus).then(|| loss_difference(&plus, &minus, labels) / (2.0 * h)))
        });
        x.data_mut()[i] = orig;
        x_minus.data_mut()[i] = orig;
        Ok(match numeric? {
            Some(n) => {
                worst = worst.max(relative_error(input_grad.data()[i], n));
                true
            }
            None => false,
        })
    })?;
    per_kind.push(KindError {
        kind: None,
        checked,
        on_kink,
        max_rel_error: worst,
    });

    let max_rel_error = per_kind.iter().map(|k| k.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_error,
        per_kind,
    })
}

#[cfg(test)]
mod tests {
    use alloc::vec;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{Conv1d, Dense, Flatten, Layer, Sequential};

    fn small_net(rng: &mut ChaCha8Rng) -> Sequential<f64> {
        Sequential::new(vec![
            Layer::Conv1d(Conv1d::new(1, 3, 2, 1, rng).unwrap()),
            Layer::Flatten(Flatten::new()),
            Layer::Dense(Dense::new(15, 2, rng).unwrap()),
        ])
    }

    fn input(rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let data = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::from_vec(&[2, 5, 1], data).unwrap()
    }

    #[test]
    fn correct_gradients_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = small_net(&mut rng);
        let x = input(&mut rng);
        let labels = LabelMatrix::from_classes(&[0, 1], 2).unwrap();
        let report = grad_check(&mut net, &x, &labels, 1e-5, 50, &mut rng).unwrap();
        assert!(report.max_rel_error < 1e-7, "{report:?}");
        assert!(report.for_kind(Some(LayerKind::Conv1d)).is_some());
        assert!(report.for_kind(None).is_some());
    }

    #[test]
    fn single_dense_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Sequential::new(vec![Layer::Dense(Dense::new(23, 2, &mut rng).unwrap())]);
        let data = (0..4 * 23).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(&[4, 1, 23], data).unwrap();
        let labels = LabelMatrix::from_classes(&[0, 1, 1, 0], 2).unwrap();
        let report = grad_check(&mut net, &x, &labels, 1e-5, 200, &mut rng).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert_eq!(report.for_kind(Some(LayerKind::Dense)).unwrap().checked, 48);
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = small_net(&mut rng);
        if let Layer::Conv1d(c) = &mut net.layers_mut()[0] {
            c.corrupt_backward();
        }
        let x = input(&mut rng);
        let labels = LabelMatrix::from_classes(&[0, 1], 2).unwrap();
        let report = grad_check(&mut net, &x, &labels, 1e-5, 50, &mut rng).unwrap();
        assert!(report.for_kind(None).unwrap().max_rel_error > 1e-2, "{report:?}");
    }

    #[test]
    fn epsilon_range_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = small_net(&mut rng);
        let x = input(&mut rng);
        let labels = LabelMatrix::from_classes(&[0, 1], 2).unwrap();
        assert!(grad_check(&mut net, &x, &labels, 1e-3, 5, &mut rng).is_err());
    }
}
