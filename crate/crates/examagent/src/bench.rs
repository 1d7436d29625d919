//! Benchmark suite: synthetic mid-term and final-term cohorts, every
//! architecture trained on each, repeated over several training seeds.

use examagent_core::encoding::encode_dataset;
use examagent_core::harness::{self, overall_accuracy, BenchmarkTable, Dataset, EvalReport, Term, TrainConfig};
use examagent_core::models::{Architecture, Network};
use examagent_core::synth::{augment, generate, CohortConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TermConfig {
    pub name: String,
    pub seed: u64,
    pub cheater_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub terms: Vec<TermConfig>,
    /// Students generated for each training cohort, before augmentation.
    pub train_students: usize,
    pub test_students: usize,
    /// The test cohort of a term uses the term seed plus this offset.
    pub test_seed_offset: u64,
    /// Training is repeated once per seed; each run re-initialises the weights.
    pub training_seeds: Vec<u64>,
    pub architectures: Vec<Architecture>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            terms: vec![
                TermConfig {
                    name: "Mid-term".into(),
                    seed: 42,
                    cheater_fraction: 0.15,
                },
                TermConfig {
                    name: "Final-term".into(),
                    seed: 43,
                    cheater_fraction: 0.20,
                },
            ],
            train_students: 540,
            test_students: 200,
            test_seed_offset: 1000,
            training_seeds: vec![1, 2, 3],
            architectures: Architecture::ALL.to_vec(),
        }
    }
}

impl Default for TermConfig {
    fn default() -> Self {
        Self {
            name: "term".into(),
            seed: 42,
            cheater_fraction: 0.15,
        }
    }
}

fn encoded(cohort: &CohortConfig) -> anyhow::Result<Dataset> {
    let (records, _) = generate(cohort)?;
    let (features, labels) = encode_dataset(&records, &cohort.exam, &cohort.speed_model);
    Ok(Dataset::new(features, labels)?)
}

/// Builds every term's training set (cohort plus `augment_count` synthetic
/// abnormal rows) and its independent test cohort.
pub fn build_terms(bench: &BenchConfig, base: &CohortConfig, augment_count: usize) -> anyhow::Result<Vec<Term>> {
    bench
        .terms
        .iter()
        .map(|t| {
            let train_cohort = CohortConfig {
                student_count: bench.train_students,
                cheater_fraction: t.cheater_fraction,
                seed: t.seed,
                ..base.clone()
            };
            let test_cohort = CohortConfig {
                student_count: bench.test_students,
                seed: t.seed + bench.test_seed_offset,
                ..train_cohort.clone()
            };
            let raw = encoded(&train_cohort)?;
            let (features, labels) = augment(&raw.features, &raw.labels, augment_count, t.seed)?;
            Ok(Term {
                name: t.name.clone(),
                train: Dataset::new(features, labels)?,
                test: encoded(&test_cohort)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub table: BenchmarkTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub architecture: Architecture,
    /// Mean accuracy per term over the training seeds, percent.
    pub terms: Vec<f64>,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOutcome {
    pub term_names: Vec<String>,
    pub runs: Vec<SeedRun>,
    pub mean: Vec<MeanRow>,
}

impl BenchOutcome {
    pub fn mean_row(&self, architecture: Architecture) -> Option<&MeanRow> {
        self.mean.iter().find(|r| r.architecture == architecture)
    }
}

pub fn run(
    bench: &BenchConfig,
    train: &TrainConfig,
    terms: &[Term],
    progress: &mut dyn FnMut(u64, Architecture, &str, &EvalReport, &Network<f32>),
) -> anyhow::Result<BenchOutcome> {
    let mut runs = Vec::with_capacity(bench.training_seeds.len());
    for &seed in &bench.training_seeds {
        let config = TrainConfig { seed, ..*train };
        let table = harness::benchmark(terms, &bench.architectures, &config, &mut |a, t, r, n| progress(seed, a, t, r, n))?;
        runs.push(SeedRun { seed, table });
    }
    let mean = bench
        .architectures
        .iter()
        .map(|&architecture| {
            let term_means: Vec<f64> = (0..terms.len())
                .map(|t| {
                    let sum: f64 = runs
                        .iter()
                        .filter_map(|r| r.table.row(architecture))
                        .map(|row| row.terms[t].accuracy)
                        .sum();
                    sum / runs.len().max(1) as f64
                })
                .collect();
            MeanRow {
                architecture,
                overall: overall_accuracy(&term_means),
                terms: term_means,
            }
        })
        .collect();
    Ok(BenchOutcome {
        term_names: terms.iter().map(|t| t.name.clone()).collect(),
        runs,
        mean,
    })
}
