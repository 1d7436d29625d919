//! JSON configuration file. Every section and field is optional; missing
//! values take their defaults.
//!
//! ```json
//! {
//!   "speed_model": { "easy_seconds": 15, "fast_factor": 0.5 },
//!   "train": { "epochs": 50, "learning_rate": 1e-5 },
//!   "service": { "listen": "127.0.0.1:7878", "clock": "logical" },
//!   "synth": { "student_count": 94, "cheater_fraction": 0.15 },
//!   "exam": { "difficulties": ["Easy", ...], "max_scores": [2, ...], "set_pool": ["A", "B"] }
//! }
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use examagent_core::encoding::SpeedModel;
use examagent_core::harness::TrainConfig;
use examagent_core::records::ExamSpec;
use examagent_core::synth::CohortConfig;
use serde::{Deserialize, Serialize};

use crate::bench::BenchConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockKind {
    /// Milliseconds since the Unix epoch.
    #[default]
    Wall,
    /// Event counter; makes alert logs reproducible under replay.
    Logical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub listen: String,
    pub checkpoint: Option<PathBuf>,
    /// Append-only log of every alert.
    pub alert_log: PathBuf,
    /// Append-only log of every set-assignment decision.
    pub audit_log: PathBuf,
    pub clock: ClockKind,
    /// Seeds the registry's random assignments.
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7878".into(),
            checkpoint: None,
            alert_log: "alerts.ndjson".into(),
            audit_log: "audit.ndjson".into(),
            clock: ClockKind::Wall,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub speed_model: SpeedModel,
    pub train: TrainConfig,
    pub service: ServiceConfig,
    pub synth: CohortConfig,
    pub exam: ExamSpec,
    pub benchmark: BenchConfig,
}

impl AppConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Loads `path` if given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.exam.validate().context("exam")?;
        self.speed_model.validate().context("speed_model")?;
        self.train.validate().context("train")?;
        Ok(())
    }

    /// Cohort settings with the top-level exam and speed model applied.
    pub fn cohort(&self) -> CohortConfig {
        CohortConfig {
            exam: self.exam.clone(),
            speed_model: self.speed_model,
            ..self.synth.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(AppConfig::from_json("{}").unwrap(), AppConfig::default());
    }

    #[test]
    fn partial_sections() {
        let c = AppConfig::from_json(
            r#"{"train": {"epochs": 3}, "service": {"clock": "logical"}, "speed_model": {"fast_factor": 0.4}}"#,
        )
        .unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.service.clock, ClockKind::Logical);
        assert_eq!(c.speed_model.fast_factor, 0.4);
        assert_eq!(c.speed_model.easy_seconds, 15);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(AppConfig::from_json(r#"{"train": {"split_ratio": 1.5}}"#).is_err());
        assert!(AppConfig::from_json(r#"{"speed_model": {"slow_factor": 0.5}}"#).is_err());
        assert!(AppConfig::from_json(r#"{"exam": {"set_pool": []}}"#).is_err());
    }
}
