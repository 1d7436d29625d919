//! Training and evaluation protocol: stratified split, mini-batch Adam
//! training, accuracy / confusion / ROC metrics and the per-term comparison
//! table.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::encoding::{BehaviorLabel, FeatureVector, CLASS_COUNT};
use crate::models::{argmax, features_to_tensor, Architecture, Network, NetworkConfig};
use crate::nn::{cross_entropy, softmax, AdamConfig, AdamState, LabelMatrix, Mode, Module, NnError, Scalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HarnessError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{features} feature vectors but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("invalid training config: {0}")]
    BadConfig(&'static str),
    #[error("training diverged: non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub split_ratio: f64,
    pub seed: u64,
    /// Extra abnormal rows appended to the training set before training.
    pub augment_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 32,
            epochs: 250,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            split_ratio: 0.8,
            seed: 0,
            augment_count: 60,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(HarnessError::BadConfig("split_ratio must lie strictly between 0 and 1"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(HarnessError::BadConfig("batch_size and epochs must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(HarnessError::BadConfig("learning_rate must be finite and non-negative"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(HarnessError::BadConfig("weight_decay must be finite and non-negative"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(HarnessError::BadConfig("beta1 and beta2 must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Encoded samples with their labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dataset {
    pub features: Vec<FeatureVector>,
    pub labels: Vec<BehaviorLabel>,
}

impl Dataset {
    pub fn new(features: Vec<FeatureVector>, labels: Vec<BehaviorLabel>) -> Result<Self, HarnessError> {
        if features.len() != labels.len() {
            return Err(HarnessError::LengthMismatch {
                features: features.len(),
                labels: labels.len(),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: indices.iter().map(|&i| self.features[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn count(&self, label: BehaviorLabel) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }
}

/// Index partition produced by [`split`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    /// Only one class was present, so stratification was meaningless.
    pub single_class: bool,
}

/// Stratified split: `floor(n * ratio)` indices for training, the rest for
/// validation. Each class contributes in proportion to its size; slots left
/// over after flooring go to the classes with the largest remainders.
pub fn split(labels: &[BehaviorLabel], ratio: f64, seed: u64) -> Result<Split, HarnessError> {
    if labels.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(HarnessError::BadConfig("split ratio must lie strictly between 0 and 1"));
    }
    let n = labels.len();
    let target = num_traits::Float::floor(n as f64 * ratio) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut classes: Vec<Vec<usize>> = (0..CLASS_COUNT)
        .map(|c| (0..n).filter(|&i| labels[i].class_index() == c).collect())
        .collect();
    for members in &mut classes {
        members.shuffle(&mut rng);
    }
    let exact: Vec<f64> = classes.iter().map(|m| m.len() as f64 * ratio).collect();
    let mut quota: Vec<usize> = exact.iter().map(|&x| num_traits::Float::floor(x) as usize).collect();
    let mut by_remainder: Vec<usize> = (0..CLASS_COUNT).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = exact[a] - quota[a] as f64;
        let rb = exact[b] - quota[b] as f64;
        rb.partial_cmp(&ra).unwrap_or(core::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut missing = target - quota.iter().sum::<usize>();
    for &c in by_remainder.iter().cycle().take(CLASS_COUNT * 2) {
        if missing == 0 {
            break;
        }
        if quota[c] < classes[c].len() {
            quota[c] += 1;
            missing -= 1;
        }
    }

    let mut train = Vec::with_capacity(target);
    let mut validation = Vec::with_capacity(n - target);
    for (members, &q) in classes.iter().zip(&quota) {
        train.extend_from_slice(&members[..q]);
        validation.extend_from_slice(&members[q..]);
    }
    train.sort_unstable();
    validation.sort_unstable();
    let single_class = classes.iter().filter(|m| !m.is_empty()).count() < 2;
    Ok(Split {
        train,
        validation,
        single_class,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean per-sample loss of every epoch, measured during that epoch.
    pub loss_history: Vec<f64>,
    pub steps: u64,
}

/// Mini-batch Adam on the mean cross-entropy of each batch. Sample order is
/// reshuffled every epoch and dropout masks are drawn from the same seeded
/// stream, so a fixed seed reproduces the run exactly.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<TrainReport, HarnessError> {
    config.validate()?;
    if data.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(config.adam());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let features: Vec<FeatureVector> = batch.iter().map(|&i| data.features[i]).collect();
            let targets: Vec<usize> = batch.iter().map(|&i| data.labels[i].class_index()).collect();
            let x = features_to_tensor::<T>(&features);
            let labels = LabelMatrix::from_classes(&targets, net.classes())?;

            net.zero_grad();
            let logits = net.forward(&x, &mut Mode::Train(&mut rng))?;
            let (loss, mut grad) = cross_entropy(&logits, &labels)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(HarnessError::NonFiniteLoss { epoch });
            }
            total += loss;
            let scale = T::of(1.0 / batch.len() as f64);
            for g in grad.data_mut() {
                *g *= scale;
            }
            net.backward(&grad)?;
            adam.step_module(net)?;
        }
        loss_history.push(total / data.len() as f64);
    }
    Ok(TrainReport {
        loss_history,
        steps: adam.step_count(),
    })
}

/// Builds a fresh network for `architecture` from `seed` and trains it.
pub fn fit<T: Scalar>(
    architecture: Architecture,
    data: &Dataset,
    config: &TrainConfig,
) -> Result<(Network<T>, TrainReport), HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let net_config = match architecture {
        Architecture::DenseLstm => NetworkConfig::dense_lstm(CLASS_COUNT),
        other => NetworkConfig::baseline(other, CLASS_COUNT),
    };
    let mut net = Network::build(net_config, &mut rng)?;
    let report = train(&mut net, data, config)?;
    Ok((net, report))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Confusion {
    /// Abnormal predicted abnormal.
    pub tp: usize,
    /// Normal predicted abnormal.
    pub fp: usize,
    pub tn: usize,
    /// Abnormal predicted normal.
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[BehaviorLabel], actual: &[BehaviorLabel]) -> Self {
        let mut c = Self::default();
        for (p, a) in predicted.iter().zip(actual) {
            match (p, a) {
                (BehaviorLabel::Abnormal, BehaviorLabel::Abnormal) => c.tp += 1,
                (BehaviorLabel::Abnormal, BehaviorLabel::Normal) => c.fp += 1,
                (BehaviorLabel::Normal, BehaviorLabel::Normal) => c.tn += 1,
                (BehaviorLabel::Normal, BehaviorLabel::Abnormal) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Percentage of correct predictions.
    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        100.0 * (self.tp + self.tn) as f64 / self.total() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RocPoint {
    /// Scores at or above this value count as abnormal.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve over every distinct score plus the sentinels `+inf` and `-inf`,
/// ordered by decreasing threshold. A rate whose denominator is zero is
/// reported as 0.
pub fn roc_curve(scores: &[f64], actual: &[BehaviorLabel]) -> Vec<RocPoint> {
    let positives = actual.iter().filter(|l| **l == BehaviorLabel::Abnormal).count();
    let negatives = actual.len() - positives;
    let mut ranked: Vec<(f64, bool)> = scores
        .iter()
        .zip(actual)
        .map(|(&s, &l)| (s, l == BehaviorLabel::Abnormal))
        .collect();
    ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal));

    let rate = |k: usize, total: usize| if total == 0 { 0.0 } else { k as f64 / total as f64 };
    let mut points = alloc::vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < ranked.len() {
        let threshold = ranked[i].0;
        while i < ranked.len() && ranked[i].0 == threshold {
            if ranked[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: rate(fp, negatives),
            tpr: rate(tp, positives),
        });
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: rate(fp, negatives),
        tpr: rate(tp, positives),
    });
    points
}

/// Trapezoidal area under an ROC curve.
pub fn auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct EvalReport {
    /// Percent.
    pub accuracy: f64,
    pub confusion: Confusion,
    pub roc: Vec<RocPoint>,
    /// `None` when the test set holds only one class.
    pub auc: Option<f64>,
    /// Percent; `100 - accuracy`.
    pub error_rate: f64,
}

impl EvalReport {
    pub fn from_scores(scores: &[f64], predicted: &[BehaviorLabel], actual: &[BehaviorLabel]) -> Self {
        let confusion = Confusion::from_predictions(predicted, actual);
        let roc = roc_curve(scores, actual);
        let positives = actual.iter().filter(|l| **l == BehaviorLabel::Abnormal).count();
        let auc = (positives > 0 && positives < actual.len()).then(|| auc(&roc));
        let accuracy = confusion.accuracy();
        Self {
            accuracy,
            confusion,
            roc,
            auc,
            error_rate: 100.0 - accuracy,
        }
    }
}

/// Runs the network over `data` in inference mode and scores it.
pub fn evaluate<T: Scalar>(net: &mut Network<T>, data: &Dataset) -> Result<EvalReport, HarnessError> {
    if data.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let mut scores = Vec::with_capacity(data.len());
    let mut predicted = Vec::with_capacity(data.len());
    let abnormal = BehaviorLabel::Abnormal.class_index();
    for chunk in data.features.chunks(64) {
        let logits = net.logits(&features_to_tensor(chunk), &mut Mode::Infer)?;
        let probs = softmax(&logits);
        for row in probs.data().chunks_exact(net.classes()) {
            let (idx, _) = argmax(row);
            predicted.push(BehaviorLabel::from_class_index(idx).unwrap_or(BehaviorLabel::Abnormal));
            scores.push(row[abnormal].as_f64());
        }
    }
    Ok(EvalReport::from_scores(&scores, &predicted, &data.labels))
}

/// Accuracy (percent) rounded to two decimals, half away from zero, and held
/// as an integer count of hundredths.
pub fn centi_percent(accuracy: f64) -> i64 {
    num_traits::Float::round(accuracy * 100.0) as i64
}

/// Unweighted mean of per-term accuracies, each first rounded to two
/// decimals, with the mean itself rounded half-up to two decimals.
pub fn overall_accuracy(terms: &[f64]) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    let n = terms.len() as i64;
    let sum: i64 = terms.iter().map(|&t| centi_percent(t)).sum();
    let mean = (2 * sum + n).div_euclid(2 * n);
    mean as f64 / 100.0
}

/// One architecture's row in the comparison table.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct BenchmarkRow {
    pub architecture: Architecture,
    /// One report per term, in the table's term order.
    pub terms: Vec<EvalReport>,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct BenchmarkTable {
    pub term_names: Vec<String>,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkTable {
    pub fn row(&self, architecture: Architecture) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.architecture == architecture)
    }
}

/// Train and test data for one exam term.
#[derive(Debug, Clone)]
pub struct Term {
    pub name: String,
    pub train: Dataset,
    pub test: Dataset,
}

/// Trains every architecture on every term and evaluates it on that term's
/// test set. `progress` is called after each finished model, with the
/// trained network.
pub fn benchmark(
    terms: &[Term],
    architectures: &[Architecture],
    config: &TrainConfig,
    progress: &mut dyn FnMut(Architecture, &str, &EvalReport, &Network<f32>),
) -> Result<BenchmarkTable, HarnessError> {
    let mut rows = Vec::with_capacity(architectures.len());
    for &arch in architectures {
        let mut reports = Vec::with_capacity(terms.len());
        for term in terms {
            let (mut net, _) = fit::<f32>(arch, &term.train, config)?;
            let report = evaluate(&mut net, &term.test)?;
            progress(arch, &term.name, &report, &net);
            reports.push(report);
        }
        let overall = overall_accuracy(&reports.iter().map(|r| r.accuracy).collect::<Vec<_>>());
        rows.push(BenchmarkRow {
            architecture: arch,
            terms: reports,
            overall,
        });
    }
    Ok(BenchmarkTable {
        term_names: terms.iter().map(|t| t.name.clone()).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::SpeedCategory;
    use crate::records::QUESTION_COUNT;
    use alloc::vec;
    use BehaviorLabel::{Abnormal as A, Normal as N};

    #[test]
    fn split_sizes_and_partition() {
        let labels: Vec<BehaviorLabel> = (0..94).map(|i| if i % 7 == 0 { A } else { N }).collect();
        let s = split(&labels, 0.8, 3).unwrap();
        assert_eq!((s.train.len(), s.validation.len()), (75, 19));
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..94).collect::<Vec<_>>());
        assert!(!s.single_class);
        assert_eq!(s, split(&labels, 0.8, 3).unwrap());
        // 14 abnormal: 11.2 of them go to training
        assert_eq!(s.train.iter().filter(|&&i| labels[i] == A).count(), 11);
    }

    #[test]
    fn split_single_class_and_empty() {
        let s = split(&[N; 10], 0.8, 0).unwrap();
        assert!(s.single_class);
        assert_eq!((s.train.len(), s.validation.len()), (8, 2));
        assert_eq!(split(&[], 0.8, 0).unwrap_err(), HarnessError::EmptyDataset);
    }

    #[test]
    fn auc_hand_cases() {
        let labels = [A, A, N, N];
        let a = auc(&roc_curve(&[0.9, 0.8, 0.4, 0.1], &labels));
        assert!((a - 1.0).abs() < 1e-12);
        let b = auc(&roc_curve(&[0.9, 0.4, 0.8, 0.1], &labels));
        assert!((b - 0.75).abs() < 1e-12);
        let flat = roc_curve(&[0.5; 4], &labels);
        assert_eq!(flat.len(), 3);
        assert!((auc(&flat) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn roc_endpoints() {
        let r = roc_curve(&[0.3, 0.7, 0.7, 0.2], &[N, A, N, A]);
        let first = r.first().unwrap();
        let last = r.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert_eq!(r.len(), 5);
    }

    #[test]
    fn overall_column() {
        assert_eq!(overall_accuracy(&[82.74, 52.68]), 67.71);
        assert_eq!(overall_accuracy(&[97.77, 92.86]), 95.32);
    }

    #[test]
    fn confusion_accuracy() {
        let c = Confusion::from_predictions(&[A, A, N, N, N], &[A, N, N, A, N]);
        assert_eq!(c, Confusion { tp: 1, fp: 1, tn: 2, fn_: 1 });
        assert!((c.accuracy() - 60.0).abs() < 1e-12);
    }

    fn toy(n: usize) -> Dataset {
        let features = (0..n)
            .map(|i| {
                let speed = if i % 2 == 0 { SpeedCategory::Fast } else { SpeedCategory::Normal };
                FeatureVector::from_parts([true; QUESTION_COUNT], speed)
            })
            .collect::<Vec<_>>();
        let labels = features.iter().map(|f| f.label()).collect();
        Dataset::new(features, labels).unwrap()
    }

    #[test]
    fn step_count_and_determinism() {
        let config = TrainConfig {
            epochs: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        let data = toy(64);
        let (mut a, ra) = fit::<f32>(Architecture::Dnn, &data, &config).unwrap();
        let (mut b, rb) = fit::<f32>(Architecture::Dnn, &data, &config).unwrap();
        assert_eq!(ra.steps, 4);
        assert_eq!(ra, rb);
        let mut pa = vec![];
        a.visit_params(&mut |p| pa.extend_from_slice(p.value.data()));
        let mut pb = vec![];
        b.visit_params(&mut |p| pb.extend_from_slice(p.value.data()));
        assert_eq!(pa, pb);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let config = TrainConfig {
            epochs: 1,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let data = toy(16);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut net = Network::<f64>::build(NetworkConfig::baseline(Architecture::Dnn, 2), &mut rng).unwrap();
        let mut before = vec![];
        net.visit_params(&mut |p| before.extend_from_slice(p.value.data()));
        train(&mut net, &data, &config).unwrap();
        let mut after = vec![];
        net.visit_params(&mut |p| after.extend_from_slice(p.value.data()));
        assert_eq!(before, after);
    }

    #[test]
    fn dnn_learns_toy_problem() {
        let config = TrainConfig {
            epochs: 40,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let data = toy(64);
        let (mut net, report) = fit::<f32>(Architecture::Dnn, &data, &config).unwrap();
        assert!(report.loss_history.last() < report.loss_history.first());
        let eval = evaluate(&mut net, &data).unwrap();
        assert_eq!(eval.accuracy, 100.0);
        assert_eq!(eval.auc, Some(1.0));
    }
}
