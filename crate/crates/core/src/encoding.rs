//! One-hot feature encoding and behaviour labelling.
//!
//! A record becomes a 23-element binary vector: twenty correctness bits
//! followed by a one-hot speed category in the order (fast, normal, slow).
//! A record is abnormal when at least 18 of 20 answers are correct *and* the
//! exam was completed too fast or too slow for its difficulty mix.

use alloc::vec::Vec;
use core::fmt;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::records::{Difficulty, ExamRecord, ExamSpec, QUESTION_COUNT};

/// Length of the encoded feature vector.
pub const FEATURE_LEN: usize = QUESTION_COUNT + 3;

/// Minimum correct answers (out of 20) for the "90% correct" condition.
pub const ABNORMAL_MIN_CORRECT: usize = 18;

/// Number of behaviour classes.
pub const CLASS_COUNT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum SpeedCategory {
    Fast,
    Normal,
    Slow,
}

impl SpeedCategory {
    pub const ALL: [SpeedCategory; 3] = [Self::Fast, Self::Normal, Self::Slow];

    /// Position of this category inside the trailing one-hot triple.
    pub fn one_hot_index(self) -> usize {
        match self {
            Self::Fast => 0,
            Self::Normal => 1,
            Self::Slow => 2,
        }
    }

    pub fn is_extreme(self) -> bool {
        !matches!(self, Self::Normal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum BehaviorLabel {
    Normal,
    Abnormal,
}

impl BehaviorLabel {
    pub fn class_index(self) -> usize {
        match self {
            Self::Normal => 0,
            Self::Abnormal => 1,
        }
    }

    pub fn from_class_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(Self::Normal),
            1 => Some(Self::Abnormal),
            _ => None,
        }
    }
}

impl fmt::Display for BehaviorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Normal => "normal",
            Self::Abnormal => "abnormal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncodingError {
    #[error("feature bit {index} is {value}, expected 0 or 1")]
    NotBinary { index: usize, value: u8 },
    #[error("speed bits must be one-hot, found {0:?}")]
    SpeedNotOneHot([u8; 3]),
    #[error("invalid speed model: {0}")]
    BadSpeedModel(&'static str),
}

/// Per-difficulty nominal answering times and the ratios that bound the
/// normal-speed band.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default))]
pub struct SpeedModel {
    pub easy_seconds: u32,
    pub moderate_seconds: u32,
    pub high_seconds: u32,
    pub fast_factor: f64,
    pub slow_factor: f64,
}

impl Default for SpeedModel {
    fn default() -> Self {
        Self {
            easy_seconds: 15,
            moderate_seconds: 35,
            high_seconds: 90,
            fast_factor: 0.5,
            slow_factor: 2.0,
        }
    }
}

impl SpeedModel {
    pub fn validate(&self) -> Result<(), EncodingError> {
        if self.easy_seconds == 0 || self.moderate_seconds == 0 || self.high_seconds == 0 {
            return Err(EncodingError::BadSpeedModel("nominal seconds must be positive"));
        }
        if !(self.fast_factor > 0.0 && self.fast_factor < 1.0 && self.slow_factor > 1.0) {
            return Err(EncodingError::BadSpeedModel(
                "factors must satisfy 0 < fast < 1 < slow",
            ));
        }
        Ok(())
    }

    pub fn nominal_seconds(&self, difficulty: Difficulty) -> u32 {
        match difficulty {
            Difficulty::Easy => self.easy_seconds,
            Difficulty::Moderate => self.moderate_seconds,
            Difficulty::High => self.high_seconds,
        }
    }
}

/// Total nominal completion time of the exam, in seconds.
pub fn expected_duration(spec: &ExamSpec, model: &SpeedModel) -> u32 {
    spec.difficulties()
        .iter()
        .map(|&d| model.nominal_seconds(d))
        .sum()
}

/// Classifies a completion time in seconds. Both thresholds are exclusive.
pub fn categorize_seconds(seconds: f64, expected_seconds: f64, model: &SpeedModel) -> SpeedCategory {
    if seconds < model.fast_factor * expected_seconds {
        SpeedCategory::Fast
    } else if seconds > model.slow_factor * expected_seconds {
        SpeedCategory::Slow
    } else {
        SpeedCategory::Normal
    }
}

pub fn categorize_speed(record: &ExamRecord, spec: &ExamSpec, model: &SpeedModel) -> SpeedCategory {
    categorize_seconds(
        record.duration_seconds() as f64,
        f64::from(expected_duration(spec, model)),
        model,
    )
}

/// The labelling rule on its two inputs.
pub fn label_from(correct_count: usize, speed: SpeedCategory) -> BehaviorLabel {
    if correct_count >= ABNORMAL_MIN_CORRECT && speed.is_extreme() {
        BehaviorLabel::Abnormal
    } else {
        BehaviorLabel::Normal
    }
}

pub fn label(record: &ExamRecord, spec: &ExamSpec, model: &SpeedModel) -> BehaviorLabel {
    label_from(record.correct_count(), categorize_speed(record, spec, model))
}

/// Binary feature vector: correctness bits then a one-hot speed triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    bits: [u8; FEATURE_LEN],
}

impl FeatureVector {
    pub fn from_parts(correct: [bool; QUESTION_COUNT], speed: SpeedCategory) -> Self {
        let mut bits = [0u8; FEATURE_LEN];
        for (b, &c) in bits.iter_mut().zip(correct.iter()) {
            *b = u8::from(c);
        }
        bits[QUESTION_COUNT + speed.one_hot_index()] = 1;
        Self { bits }
    }

    pub fn from_bits(bits: [u8; FEATURE_LEN]) -> Result<Self, EncodingError> {
        if let Some((index, &value)) = bits.iter().enumerate().find(|(_, &b)| b > 1) {
            return Err(EncodingError::NotBinary { index, value });
        }
        let speed: [u8; 3] = bits[QUESTION_COUNT..].try_into().unwrap();
        if speed.iter().map(|&b| u32::from(b)).sum::<u32>() != 1 {
            return Err(EncodingError::SpeedNotOneHot(speed));
        }
        Ok(Self { bits })
    }

    pub fn bits(&self) -> &[u8; FEATURE_LEN] {
        &self.bits
    }

    pub fn correct_bits(&self) -> &[u8] {
        &self.bits[..QUESTION_COUNT]
    }

    pub fn correct_count(&self) -> usize {
        self.correct_bits().iter().filter(|&&b| b == 1).count()
    }

    pub fn speed(&self) -> SpeedCategory {
        let tail = &self.bits[QUESTION_COUNT..];
        let idx = tail.iter().position(|&b| b == 1).unwrap_or(1);
        SpeedCategory::ALL[idx]
    }

    /// Sets correctness bit `question` (0-based).
    pub fn set_correct(&mut self, question: usize, correct: bool) {
        assert!(question < QUESTION_COUNT);
        self.bits[question] = u8::from(correct);
    }

    pub fn set_speed(&mut self, speed: SpeedCategory) {
        for b in &mut self.bits[QUESTION_COUNT..] {
            *b = 0;
        }
        self.bits[QUESTION_COUNT + speed.one_hot_index()] = 1;
    }

    /// Label implied by the features alone.
    pub fn label(&self) -> BehaviorLabel {
        label_from(self.correct_count(), self.speed())
    }
}

pub fn encode(record: &ExamRecord, spec: &ExamSpec, model: &SpeedModel) -> FeatureVector {
    let correct = core::array::from_fn(|q| record.answers[q].is_correct());
    FeatureVector::from_parts(correct, categorize_speed(record, spec, model))
}

/// Encodes and labels every record, preserving order.
pub fn encode_dataset(
    records: &[ExamRecord],
    spec: &ExamSpec,
    model: &SpeedModel,
) -> (Vec<FeatureVector>, Vec<BehaviorLabel>) {
    records
        .iter()
        .map(|r| (encode(r, spec, model), label(r, spec, model)))
        .unzip()
}
