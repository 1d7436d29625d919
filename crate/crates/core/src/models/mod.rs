//! Network architectures: the DenseLSTM behaviour detector and the DNN, LSTM
//! and RNN baselines it is benchmarked against.
//!
//! All networks consume a batch of feature vectors as a `[batch, 23, 1]`
//! sequence and produce `[batch, 1, classes]` logits.

mod dense_block;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

pub use dense_block::{DenseBlock, DenseUnit};

use crate::encoding::{BehaviorLabel, FeatureVector, FEATURE_LEN};
use crate::nn::{
    same_out_len, softmax, AvgPool, Conv1d, Dense, Flatten, LastStep, Layer, Lstm, Mode, Module,
    NnError, Param, Relu, Rnn, Scalar, Tensor,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Architecture {
    #[cfg_attr(feature = "serde", serde(rename = "denselstm"))]
    DenseLstm,
    Dnn,
    Lstm,
    Rnn,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [Self::Dnn, Self::Lstm, Self::Rnn, Self::DenseLstm];

    /// Tag stored in checkpoint headers.
    pub fn tag(self) -> u8 {
        match self {
            Self::DenseLstm => 1,
            Self::Dnn => 2,
            Self::Lstm => 3,
            Self::Rnn => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::DenseLstm => "DenseLSTM",
            Self::Dnn => "DNN",
            Self::Lstm => "LSTM",
            Self::Rnn => "RNN",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "denselstm" | "dense-lstm" => Ok(Self::DenseLstm),
            "dnn" => Ok(Self::Dnn),
            "lstm" => Ok(Self::Lstm),
            "rnn" => Ok(Self::Rnn),
            other => Err(alloc::format!("unknown architecture {other:?}")),
        }
    }
}

/// Hyperparameters needed to rebuild a network before loading its weights.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct NetworkConfig {
    pub architecture: Architecture,
    pub classes: usize,
    /// Channels contributed by each dense-block layer.
    pub growth: usize,
    /// Dropout keep probability inside dense blocks.
    pub dropout_keep: f64,
}

impl NetworkConfig {
    pub fn dense_lstm(classes: usize) -> Self {
        Self {
            architecture: Architecture::DenseLstm,
            classes,
            growth: DENSE_LSTM_GROWTH,
            dropout_keep: DROPOUT_KEEP,
        }
    }

    pub fn baseline(architecture: Architecture, classes: usize) -> Self {
        Self {
            architecture,
            ..Self::dense_lstm(classes)
        }
    }
}

pub const DENSE_LSTM_GROWTH: usize = 32;
pub const DROPOUT_KEEP: f64 = 0.8;
pub const STEM_CHANNELS: usize = 64;
pub const BLOCK_LAYERS: [usize; 2] = [4, 8];
pub const FINAL_LSTM_UNITS: usize = 512;
pub const DNN_WIDTHS: [usize; 3] = [256, 128, 64];
pub const RECURRENT_BASELINE_UNITS: usize = 128;

#[derive(Debug, Clone)]
pub enum Stage<T> {
    Layer(Layer<T>),
    Block(DenseBlock<T>),
}

impl<T: Scalar> Module<T> for Stage<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: &mut Mode<'_>) -> Result<Tensor<T>, NnError> {
        match self {
            Stage::Layer(l) => l.forward(x, mode),
            Stage::Block(b) => b.forward(x, mode),
        }
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        match self {
            Stage::Layer(l) => l.backward(grad),
            Stage::Block(b) => b.backward(grad),
        }
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(Param<'_, T>)) {
        match self {
            Stage::Layer(l) => l.visit_params(f),
            Stage::Block(b) => b.visit_params(f),
        }
    }

    fn activation_pattern(&self, out: &mut Vec<bool>) {
        match self {
            Stage::Layer(l) => l.activation_pattern(out),
            Stage::Block(b) => b.activation_pattern(out),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NamedStage<T> {
    pub name: &'static str,
    pub stage: Stage<T>,
}

/// Output geometry of one stage for a single sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageShape {
    pub name: &'static str,
    pub len: usize,
    pub channels: usize,
}

/// A complete network: its configuration and ordered stages.
#[derive(Debug, Clone)]
pub struct Network<T> {
    config: NetworkConfig,
    stages: Vec<NamedStage<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn build<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self, NnError> {
        match config.architecture {
            Architecture::DenseLstm => build_dense_lstm(config, rng),
            _ => build_baseline(config, rng),
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn stages(&self) -> &[NamedStage<T>] {
        &self.stages
    }

    /// Per-stage output shapes for a `FEATURE_LEN`-long single-channel input,
    /// derived from layer geometry without running the network.
    pub fn shape_chain(&self) -> Vec<StageShape> {
        let mut len = FEATURE_LEN;
        let mut channels = 1;
        let mut chain = Vec::with_capacity(self.stages.len() + 1);
        chain.push(StageShape {
            name: "input",
            len,
            channels,
        });
        for s in &self.stages {
            match &s.stage {
                Stage::Block(b) => channels = b.output_channels(),
                Stage::Layer(layer) => match layer {
                    Layer::Conv1d(c) => {
                        len = same_out_len(len, c.stride());
                        channels = c.out_channels();
                    }
                    Layer::Lstm(l) => channels = l.hidden_size(),
                    Layer::Rnn(r) => channels = r.hidden_size(),
                    Layer::AvgPool(p) => len = same_out_len(len, p.stride()),
                    Layer::Dense(d) => channels = d.output_size(),
                    Layer::Flatten(_) => {
                        channels *= len;
                        len = 1;
                    }
                    Layer::LastStep(_) => len = 1,
                    Layer::Relu(_) | Layer::Dropout(_) => {}
                },
            }
            chain.push(StageShape {
                name: s.name,
                len,
                channels,
            });
        }
        chain
    }

    /// Logits as a `[batch, classes]` tensor.
    pub fn logits(&mut self, x: &Tensor<T>, mode: &mut Mode<'_>) -> Result<Tensor<T>, NnError> {
        let batch = x.shape().first().copied().unwrap_or(0);
        let out = self.forward(x, mode)?;
        out.reshape(&[batch, self.config.classes])
    }

    /// Class probabilities in inference mode, `[batch, classes]`.
    pub fn predict_proba(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        Ok(softmax(&self.logits(x, &mut Mode::Infer)?))
    }

    /// Most probable label and its probability for every row of `x`.
    pub fn classify(&mut self, x: &Tensor<T>) -> Result<Vec<(BehaviorLabel, f64)>, NnError> {
        let probs = self.predict_proba(x)?;
        Ok(probs
            .data()
            .chunks_exact(self.config.classes)
            .map(|row| {
                let (idx, p) = argmax(row);
                (
                    BehaviorLabel::from_class_index(idx).unwrap_or(BehaviorLabel::Abnormal),
                    p,
                )
            })
            .collect())
    }
}

/// Index and value of the largest entry; ties go to the lower index.
pub fn argmax<T: Scalar>(row: &[T]) -> (usize, f64) {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    (best, row[best].as_f64())
}

/// Packs feature vectors into a `[batch, 23, 1]` network input.
pub fn features_to_tensor<T: Scalar>(features: &[FeatureVector]) -> Tensor<T> {
    let data = features
        .iter()
        .flat_map(|f| f.bits().iter().map(|&b| T::of(f64::from(b))))
        .collect();
    Tensor::from_vec(&[features.len(), FEATURE_LEN, 1], data).expect("fixed feature length")
}

impl<T: Scalar> Module<T> for Network<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: &mut Mode<'_>) -> Result<Tensor<T>, NnError> {
        let (_, len, ch) = x.dims3()?;
        if len != FEATURE_LEN || ch != 1 {
            return Err(NnError::ShapeMismatch {
                what: "network input length",
                expected: FEATURE_LEN,
                found: len * ch,
            });
        }
        let mut h = x.clone();
        for s in &mut self.stages {
            h = s.stage.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut g = grad.clone();
        for s in self.stages.iter_mut().rev() {
            g = s.stage.backward(&g)?;
        }
        Ok(g)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(Param<'_, T>)) {
        for s in &mut self.stages {
            s.stage.visit_params(f);
        }
    }

    fn activation_pattern(&self, out: &mut Vec<bool>) {
        for s in &self.stages {
            s.stage.activation_pattern(out);
        }
    }
}

fn layer<T>(name: &'static str, l: Layer<T>) -> NamedStage<T> {
    NamedStage {
        name,
        stage: Stage::Layer(l),
    }
}

fn check_classes(config: &NetworkConfig) -> Result<(), NnError> {
    if config.classes < 2 {
        return Err(NnError::BadConfig("at least two classes are required"));
    }
    Ok(())
}

/// conv1 (64 maps, kernel 2, stride 2) -> dense block of 4 -> transition
/// (1x1 conv halving channels, average pool stride 2) -> dense block of 8 ->
/// 512-unit LSTM -> flatten -> dense to the class logits.
pub fn build_dense_lstm<T: Scalar, R: Rng + ?Sized>(
    config: NetworkConfig,
    rng: &mut R,
) -> Result<Network<T>, NnError> {
    check_classes(&config)?;
    if config.growth == 0 {
        return Err(NnError::BadConfig("growth rate must be positive"));
    }
    let g = config.growth;
    let keep = config.dropout_keep;

    let conv1 = Conv1d::new(1, STEM_CHANNELS, 2, 2, rng)?;
    let block1 = DenseBlock::new(STEM_CHANNELS, g, BLOCK_LAYERS[0], keep, rng)?;
    let after1 = block1.output_channels();
    let compressed = after1 / 2;
    let transition = Conv1d::new(after1, compressed, 1, 1, rng)?;
    let block2 = DenseBlock::new(compressed, g, BLOCK_LAYERS[1], keep, rng)?;
    let after2 = block2.output_channels();
    let cell = Lstm::new(after2, FINAL_LSTM_UNITS, rng)?;
    let pooled_len = same_out_len(same_out_len(FEATURE_LEN, 2), 2);
    let head = Dense::new(pooled_len * FINAL_LSTM_UNITS, config.classes, rng)?;

    let stages = alloc::vec![
        layer("conv1", Layer::Conv1d(conv1)),
        NamedStage {
            name: "lstm_block1",
            stage: Stage::Block(block1),
        },
        layer("transition_conv", Layer::Conv1d(transition)),
        layer("transition_pool", Layer::AvgPool(AvgPool::new(2)?)),
        NamedStage {
            name: "lstm_block2",
            stage: Stage::Block(block2),
        },
        layer("lstm_cell", Layer::Lstm(cell)),
        layer("flatten", Layer::Flatten(Flatten::new())),
        layer("output", Layer::Dense(head)),
    ];
    Ok(Network { config, stages })
}

/// DNN: three ReLU hidden layers (256, 128, 64). LSTM / RNN: one 128-unit
/// recurrent layer over the 23 feature positions, read out at the last step.
pub fn build_baseline<T: Scalar, R: Rng + ?Sized>(
    config: NetworkConfig,
    rng: &mut R,
) -> Result<Network<T>, NnError> {
    check_classes(&config)?;
    let c = config.classes;
    let h = RECURRENT_BASELINE_UNITS;
    let stages = match config.architecture {
        Architecture::Dnn => {
            let mut stages = alloc::vec![layer("flatten", Layer::Flatten(Flatten::new()))];
            let mut width = FEATURE_LEN;
            for (i, &next) in DNN_WIDTHS.iter().enumerate() {
                let names = ["hidden1", "hidden2", "hidden3"];
                stages.push(layer(names[i], Layer::Dense(Dense::new(width, next, rng)?)));
                stages.push(layer("relu", Layer::Relu(Relu::new())));
                width = next;
            }
            stages.push(layer("output", Layer::Dense(Dense::new(width, c, rng)?)));
            stages
        }
        Architecture::Lstm => alloc::vec![
            layer("lstm", Layer::Lstm(Lstm::new(1, h, rng)?)),
            layer("last_step", Layer::LastStep(LastStep::new())),
            layer("output", Layer::Dense(Dense::new(h, c, rng)?)),
        ],
        Architecture::Rnn => alloc::vec![
            layer("rnn", Layer::Rnn(Rnn::new(1, h, rng)?)),
            layer("last_step", Layer::LastStep(LastStep::new())),
            layer("output", Layer::Dense(Dense::new(h, c, rng)?)),
        ],
        Architecture::DenseLstm => {
            return Err(NnError::BadConfig("DenseLSTM is not a baseline"));
        }
    };
    Ok(Network { config, stages })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dense_lstm_shape_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = build_dense_lstm::<f32, _>(NetworkConfig::dense_lstm(2), &mut rng).unwrap();
        let chain: Vec<(usize, usize)> = net.shape_chain().iter().map(|s| (s.len, s.channels)).collect();
        assert_eq!(
            chain,
            alloc::vec![(23, 1), (12, 64), (12, 192), (12, 96), (6, 96), (6, 352), (6, 512), (1, 3072), (1, 2)]
        );
    }

    #[test]
    fn zero_input_gives_finite_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = build_dense_lstm::<f32, _>(NetworkConfig::dense_lstm(2), &mut rng).unwrap();
        let y = net.logits(&Tensor::zeros(&[1, 23, 1]), &mut Mode::Infer).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert!(y.is_finite());
    }

    #[test]
    fn classes_validated() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(build_dense_lstm::<f32, _>(NetworkConfig::dense_lstm(1), &mut rng).is_err());
        assert!(build_baseline::<f32, _>(NetworkConfig::baseline(Architecture::Dnn, 1), &mut rng).is_err());
    }

    #[test]
    fn lstm_baseline_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = build_baseline::<f32, _>(NetworkConfig::baseline(Architecture::Lstm, 2), &mut rng).unwrap();
        let gates = 4 * (128 * (1 + 128) + 128);
        assert_eq!(net.param_count(), gates + 128 * 2 + 2);
    }

    #[test]
    fn baseline_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for arch in [Architecture::Dnn, Architecture::Lstm, Architecture::Rnn] {
            let mut net = Network::<f32>::build(NetworkConfig::baseline(arch, 2), &mut rng).unwrap();
            let y = net.logits(&Tensor::zeros(&[4, 23, 1]), &mut Mode::Infer).unwrap();
            assert_eq!(y.shape(), &[4, 2], "{arch}");
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5f64, 0.5]).0, 0);
        assert_eq!(argmax(&[0.2f64, 0.8]).0, 1);
    }

    #[test]
    fn architecture_parsing() {
        assert_eq!("denselstm".parse::<Architecture>().unwrap(), Architecture::DenseLstm);
        assert_eq!("RNN".parse::<Architecture>().unwrap(), Architecture::Rnn);
        assert!("cnn".parse::<Architecture>().is_err());
        for a in Architecture::ALL {
            assert_eq!(Architecture::from_tag(a.tag()), Some(a));
        }
    }
}
