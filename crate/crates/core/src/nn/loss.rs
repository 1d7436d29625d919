use alloc::vec::Vec;

use super::{NnError, Scalar, Tensor};

/// One-hot class labels, one row per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    classes: usize,
    targets: Vec<usize>,
}

impl LabelMatrix {
    pub fn from_classes(targets: &[usize], classes: usize) -> Result<Self, NnError> {
        if classes == 0 {
            return Err(NnError::BadConfig("class count must be positive"));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(NnError::ShapeMismatch {
                what: "label class index",
                expected: classes,
                found: bad,
            });
        }
        Ok(Self {
            classes,
            targets: targets.to_vec(),
        })
    }

    /// Validates explicit one-hot rows.
    pub fn from_one_hot(rows: &[Vec<u8>]) -> Result<Self, NnError> {
        let classes = rows.first().map_or(0, Vec::len);
        let mut targets = Vec::with_capacity(rows.len());
        for row in rows {
            if row.len() != classes || row.iter().any(|&v| v > 1) || row.iter().map(|&v| v as usize).sum::<usize>() != 1 {
                return Err(NnError::BadConfig("label rows must be one-hot"));
            }
            targets.push(row.iter().position(|&v| v == 1).unwrap());
        }
        Self::from_classes(&targets, classes.max(1))
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn rows(&self) -> usize {
        self.targets.len()
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }
}

/// Row-wise softmax over the last axis, computed after subtracting each
/// row's maximum.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let classes = *logits.shape().last().unwrap_or(&1);
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(classes.max(1)) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Softmax cross-entropy summed over the batch, with its gradient
/// `softmax(Y) - L` with respect to the logits.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &LabelMatrix) -> Result<(T, Tensor<T>), NnError> {
    let classes = *logits.shape().last().unwrap_or(&0);
    if classes != labels.classes() {
        return Err(NnError::ShapeMismatch {
            what: "logit classes",
            expected: labels.classes(),
            found: classes,
        });
    }
    if logits.len() != labels.rows() * classes {
        return Err(NnError::ShapeMismatch {
            what: "logit rows",
            expected: labels.rows(),
            found: logits.len() / classes.max(1),
        });
    }
    let mut grad = softmax(logits);
    let mut loss = T::zero();
    for ((row, probs), &target) in logits
        .data()
        .chunks_exact(classes)
        .zip(grad.data_mut().chunks_exact_mut(classes))
        .zip(labels.targets())
    {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).fold(T::zero(), |a, b| a + b).ln();
        loss += lse - row[target];
        probs[target] -= T::one();
    }
    Ok((loss, grad))
}
