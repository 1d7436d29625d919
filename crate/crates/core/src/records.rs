//! Exam-record data model.
//!
//! An [`ExamRecord`] is one examinee's row of an LMS result export: the chosen
//! option and awarded points for each of the twenty multiple-choice questions,
//! the total grade, the completion time in whole minutes and the client IPv4
//! address. [`ExamSpec`] describes the exam the record belongs to.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::net::Ipv4Addr;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Number of questions in every exam handled by the agent.
pub const QUESTION_COUNT: usize = 20;

/// Lowest and highest option number of a multiple-choice answer.
pub const OPTION_RANGE: core::ops::RangeInclusive<u8> = 1..=5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("examinee id {0:?} is not a 7-digit number")]
    BadId(String),
    #[error("expected {QUESTION_COUNT} answers, found {0}")]
    AnswerCount(usize),
    #[error("question {question}: option {option} outside 1..=5")]
    BadOption { question: usize, option: u8 },
    #[error("question {question}: score {score} exceeds maximum {max}")]
    ScoreAboveMax { question: usize, score: u32, max: u32 },
    #[error("grade {grade} does not equal the sum of question scores {sum}")]
    GradeMismatch { grade: u32, sum: u32 },
    #[error("duration must be at least one minute")]
    ZeroDuration,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecError {
    #[error("expected {expected} entries in {field}, found {found}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("question {0} has a zero maximum score")]
    ZeroMaxScore(usize),
    #[error("question-set pool is empty")]
    EmptySetPool,
    #[error("question set {0:?} appears more than once in the pool")]
    DuplicateSet(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Difficulty {
    Easy,
    Moderate,
    High,
}

/// Identifier of one interchangeable version of the exam ("A", "B", ...).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(transparent))]
pub struct SetId(pub String);

impl SetId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SetId {
    fn from(s: &str) -> Self {
        Self(s.into())
    }
}

/// Static description of an exam: per-question difficulty and points, and the
/// pool of question sets the IP agent may hand out.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize), serde(default))]
pub struct ExamSpec {
    difficulties: Vec<Difficulty>,
    max_scores: Vec<u32>,
    set_pool: Vec<SetId>,
}

impl ExamSpec {
    pub fn new(
        difficulties: Vec<Difficulty>,
        max_scores: Vec<u32>,
        set_pool: Vec<SetId>,
    ) -> Result<Self, SpecError> {
        let spec = Self {
            difficulties,
            max_scores,
            set_pool,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The reference exam used throughout the crate: questions 1-6 easy and
    /// worth 2 points, 7-12 moderate and worth 2, 13-20 high and worth 3
    /// (48 points total), with sets A-D.
    pub fn standard() -> Self {
        let mut difficulties = Vec::with_capacity(QUESTION_COUNT);
        let mut max_scores = Vec::with_capacity(QUESTION_COUNT);
        for q in 0..QUESTION_COUNT {
            let (d, s) = match q {
                0..=5 => (Difficulty::Easy, 2),
                6..=11 => (Difficulty::Moderate, 2),
                _ => (Difficulty::High, 3),
            };
            difficulties.push(d);
            max_scores.push(s);
        }
        let set_pool = ["A", "B", "C", "D"].iter().map(|s| SetId::from(*s)).collect();
        Self {
            difficulties,
            max_scores,
            set_pool,
        }
    }

    /// Same questions, different pool of question sets.
    pub fn with_set_pool(mut self, set_pool: Vec<SetId>) -> Result<Self, SpecError> {
        self.set_pool = set_pool;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.difficulties.len() != QUESTION_COUNT {
            return Err(SpecError::LengthMismatch {
                field: "difficulties",
                expected: QUESTION_COUNT,
                found: self.difficulties.len(),
            });
        }
        if self.max_scores.len() != QUESTION_COUNT {
            return Err(SpecError::LengthMismatch {
                field: "max_scores",
                expected: QUESTION_COUNT,
                found: self.max_scores.len(),
            });
        }
        if let Some(q) = self.max_scores.iter().position(|&s| s == 0) {
            return Err(SpecError::ZeroMaxScore(q + 1));
        }
        if self.set_pool.is_empty() {
            return Err(SpecError::EmptySetPool);
        }
        for (i, id) in self.set_pool.iter().enumerate() {
            if self.set_pool[..i].contains(id) {
                return Err(SpecError::DuplicateSet(id.0.clone()));
            }
        }
        Ok(())
    }

    pub fn question_count(&self) -> usize {
        self.difficulties.len()
    }

    pub fn difficulties(&self) -> &[Difficulty] {
        &self.difficulties
    }

    pub fn max_scores(&self) -> &[u32] {
        &self.max_scores
    }

    pub fn set_pool(&self) -> &[SetId] {
        &self.set_pool
    }

    pub fn total_points(&self) -> u32 {
        self.max_scores.iter().sum()
    }
}

impl Default for ExamSpec {
    fn default() -> Self {
        Self::standard()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Answer {
    pub chosen_option: u8,
    pub score: u32,
}

impl Answer {
    pub fn new(chosen_option: u8, score: u32) -> Self {
        Self {
            chosen_option,
            score,
        }
    }

    /// The CSV carries no answer key, so any awarded points mean correct.
    pub fn is_correct(&self) -> bool {
        self.score > 0
    }
}

/// One examinee's exam result.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ExamRecord {
    pub id: String,
    pub answers: [Answer; QUESTION_COUNT],
    pub grade: u32,
    pub duration_minutes: u32,
    pub ip: Ipv4Addr,
}

impl ExamRecord {
    /// Builds a record and checks it against `spec`.
    pub fn new(
        id: impl Into<String>,
        answers: &[Answer],
        grade: u32,
        duration_minutes: u32,
        ip: Ipv4Addr,
        spec: &ExamSpec,
    ) -> Result<Self, RecordError> {
        let answers: [Answer; QUESTION_COUNT] = answers
            .try_into()
            .map_err(|_| RecordError::AnswerCount(answers.len()))?;
        let record = Self {
            id: id.into(),
            answers,
            grade,
            duration_minutes,
            ip,
        };
        record.validate(spec)?;
        Ok(record)
    }

    /// Builds a record whose grade is the sum of the answer scores.
    pub fn with_computed_grade(
        id: impl Into<String>,
        answers: [Answer; QUESTION_COUNT],
        duration_minutes: u32,
        ip: Ipv4Addr,
    ) -> Self {
        let grade = answers.iter().map(|a| a.score).sum();
        Self {
            id: id.into(),
            answers,
            grade,
            duration_minutes,
            ip,
        }
    }

    pub fn validate(&self, spec: &ExamSpec) -> Result<(), RecordError> {
        if !is_valid_id(&self.id) {
            return Err(RecordError::BadId(self.id.clone()));
        }
        for (q, (answer, &max)) in self.answers.iter().zip(spec.max_scores()).enumerate() {
            if !OPTION_RANGE.contains(&answer.chosen_option) {
                return Err(RecordError::BadOption {
                    question: q + 1,
                    option: answer.chosen_option,
                });
            }
            if answer.score > max {
                return Err(RecordError::ScoreAboveMax {
                    question: q + 1,
                    score: answer.score,
                    max,
                });
            }
        }
        let sum = self.score_sum();
        if sum != self.grade {
            return Err(RecordError::GradeMismatch {
                grade: self.grade,
                sum,
            });
        }
        if self.duration_minutes == 0 {
            return Err(RecordError::ZeroDuration);
        }
        Ok(())
    }

    pub fn score_sum(&self) -> u32 {
        self.answers.iter().map(|a| a.score).sum()
    }

    pub fn correct_count(&self) -> usize {
        self.answers.iter().filter(|a| a.is_correct()).count()
    }

    pub fn duration_seconds(&self) -> u64 {
        u64::from(self.duration_minutes) * 60
    }
}

/// Examinee ids are 7-digit numeric strings.
pub fn is_valid_id(id: &str) -> bool {
    id.len() == 7 && id.bytes().all(|b| b.is_ascii_digit())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn answers(correct: usize) -> [Answer; QUESTION_COUNT] {
        let spec = ExamSpec::standard();
        core::array::from_fn(|q| {
            if q < correct {
                Answer::new(1, spec.max_scores()[q])
            } else {
                Answer::new(2, 0)
            }
        })
    }

    #[test]
    fn standard_spec_is_valid() {
        let spec = ExamSpec::standard();
        spec.validate().unwrap();
        assert_eq!(spec.question_count(), 20);
        assert_eq!(spec.total_points(), 48);
        assert_eq!(spec.max_scores()[0], 2);
        assert_eq!(spec.max_scores()[19], 3);
    }

    #[test]
    fn spec_rejects_bad_pools() {
        let spec = ExamSpec::standard();
        assert_eq!(
            spec.clone().with_set_pool(vec![]),
            Err(SpecError::EmptySetPool)
        );
        assert_eq!(
            spec.with_set_pool(vec!["A".into(), "B".into(), "A".into()]),
            Err(SpecError::DuplicateSet("A".into()))
        );
    }

    #[test]
    fn spec_rejects_wrong_lengths() {
        let err = ExamSpec::new(vec![Difficulty::Easy; 19], vec![1; 20], vec!["A".into()]);
        assert!(matches!(err, Err(SpecError::LengthMismatch { field: "difficulties", .. })));
    }

    #[test]
    fn record_grade_must_match() {
        let spec = ExamSpec::standard();
        let a = answers(10);
        let ip = Ipv4Addr::new(10, 0, 0, 1);
        let ok = ExamRecord::new("2000001", &a, 20, 15, ip, &spec).unwrap();
        assert_eq!(ok.correct_count(), 10);
        let err = ExamRecord::new("2000001", &a, 19, 15, ip, &spec).unwrap_err();
        assert_eq!(err, RecordError::GradeMismatch { grade: 19, sum: 20 });
    }

    #[test]
    fn record_rejects_zero_duration_and_bad_id() {
        let spec = ExamSpec::standard();
        let a = answers(0);
        let ip = Ipv4Addr::new(10, 0, 0, 1);
        assert_eq!(
            ExamRecord::new("2000001", &a, 0, 0, ip, &spec),
            Err(RecordError::ZeroDuration)
        );
        assert!(matches!(
            ExamRecord::new("20001", &a, 0, 3, ip, &spec),
            Err(RecordError::BadId(_))
        ));
        assert_eq!(
            ExamRecord::new("2000001", &a[..19], 0, 3, ip, &spec),
            Err(RecordError::AnswerCount(19))
        );
    }

    #[test]
    fn record_rejects_option_and_score_out_of_range() {
        let spec = ExamSpec::standard();
        let ip = Ipv4Addr::new(10, 0, 0, 1);
        let mut a = answers(0);
        a[3] = Answer::new(6, 0);
        assert_eq!(
            ExamRecord::new("2000001", &a, 0, 3, ip, &spec),
            Err(RecordError::BadOption { question: 4, option: 6 })
        );
        let mut a = answers(0);
        a[0] = Answer::new(1, 3);
        assert_eq!(
            ExamRecord::new("2000001", &a, 3, 3, ip, &spec),
            Err(RecordError::ScoreAboveMax { question: 1, score: 3, max: 2 })
        );
    }
}
