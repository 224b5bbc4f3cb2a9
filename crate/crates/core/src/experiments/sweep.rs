use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::hmm::HmmTask;
use crate::manifold::Augmentation;
use crate::training::{self, relative_gap, Method, TrainConfig, TrainRecord, RECORD_HEADER};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Lambda,
    Epsilon,
    K,
    BetaMt,
    Eta,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 5] = [
        SweepAxis::Lambda,
        SweepAxis::Epsilon,
        SweepAxis::K,
        SweepAxis::BetaMt,
        SweepAxis::Eta,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::K => "k",
            SweepAxis::BetaMt => "beta_mt",
            SweepAxis::Eta => "eta",
        }
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown sweep axis {s:?} (lambda|epsilon|k|beta_mt|eta)"))
    }
}

/// Full factorial grid `values × seeds` around a base configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: TrainConfig,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::invalid("sweep needs at least one axis value"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("sweep needs at least one seed"));
        }
        for &v in &self.values {
            self.config_for(v, self.seeds[0])?.validate()?;
        }
        Ok(())
    }

    pub fn config_for(&self, value: f64, seed: u64) -> Result<TrainConfig> {
        let mut c = TrainConfig {
            seed,
            ..self.base.clone()
        };
        match self.axis {
            SweepAxis::Lambda => c.lambda = value,
            SweepAxis::Epsilon => c.augmentation.epsilon = value,
            SweepAxis::K => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::invalid(format!("k must be a positive integer, got {value}")));
                }
                c.augmentation.k = value as usize;
            }
            SweepAxis::BetaMt => c.beta_mt = value,
            SweepAxis::Eta => c.learning_rate = value,
        }
        Ok(c)
    }

    pub fn run_id(&self, value: f64, seed: u64) -> String {
        format!("{}-{}={}-seed{}", self.base.method, self.axis, value, seed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub records: Vec<TrainRecord>,
    pub final_nll: f64,
    pub final_acc: f64,
    /// `‖θ_avg − θ‖ / ‖θ‖` at the end of a Mean Teacher run.
    pub teacher_gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub run_id: String,
    pub axis_value: f64,
    pub seed: u64,
    pub outcome: std::result::Result<RunSummary, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub axis_value: f64,
    pub mean_final_nll: f64,
    /// Sample standard deviation (`n − 1` denominator; 0 for a single seed).
    pub std_final_nll: f64,
    pub n_seeds: usize,
}

impl SummaryRow {
    pub fn std_error(&self) -> f64 {
        self.std_final_nll / (self.n_seeds as f64).sqrt()
    }
}

pub const SUMMARY_HEADER: &str = "axis_value,mean_final_nll,std_final_nll,n_seeds";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput {
    pub axis: SweepAxis,
    pub runs: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
}

impl SweepOutput {
    /// All per-epoch records of successful runs, in run order.
    pub fn runs_csv(&self) -> String {
        let records: Vec<TrainRecord> = self
            .runs
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok())
            .flat_map(|s| s.records.iter().cloned())
            .collect();
        training::records_to_csv(&records)
    }

    pub fn summary_csv(&self) -> String {
        let mut out = format!("{SUMMARY_HEADER}\n");
        for row in &self.summary {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.axis_value, row.mean_final_nll, row.std_final_nll, row.n_seeds
            ));
        }
        out
    }

    pub fn failures(&self) -> impl Iterator<Item = (&str, &str)> {
        self.runs
            .iter()
            .filter_map(|r| r.outcome.as_ref().err().map(|e| (r.run_id.as_str(), e.as_str())))
    }

    pub fn row(&self, axis_value: f64) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.axis_value == axis_value)
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Trains one run of an HMM task.
pub fn run_single(task: &HmmTask, config: &TrainConfig, run_id: &str) -> Result<RunSummary> {
    let data = task.dataset(config.seed)?;
    let augmenter = Augmentation::new(&task.map, config.augmentation);
    let out = training::train(config, &data, &augmenter)?;
    let records: Vec<TrainRecord> = out
        .records
        .iter()
        .map(|r| TrainRecord {
            run_id: run_id.to_string(),
            ..r.clone()
        })
        .collect();
    let last = records.last().expect("at least one epoch");
    Ok(RunSummary {
        final_nll: last.test_nll,
        final_acc: last.test_acc,
        teacher_gap: (config.method == Method::MeanTeacher)
            .then(|| out.ema.as_ref().map(|e| relative_gap(e, &out.params)))
            .flatten(),
        records,
    })
}

/// Runs every `(value, seed)` pair on at most `jobs` threads. Runs that fail
/// are kept with their error and left out of the summary.
pub fn run_sweep(spec: &SweepSpec, task: &HmmTask, jobs: usize) -> Result<SweepOutput> {
    spec.validate()?;
    let grid: Vec<(f64, u64)> = spec
        .values
        .iter()
        .flat_map(|&v| spec.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let one = |&(value, seed): &(f64, u64)| {
        let run_id = spec.run_id(value, seed);
        let outcome = spec
            .config_for(value, seed)
            .and_then(|c| run_single(task, &c, &run_id))
            .map_err(|e| e.to_string());
        RunResult {
            run_id,
            axis_value: value,
            seed,
            outcome,
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    // `collect` on an indexed parallel iterator keeps grid order.
    let runs: Vec<RunResult> = pool.install(|| grid.par_iter().map(one).collect());

    let summary = spec
        .values
        .iter()
        .map(|&v| {
            let finals: Vec<f64> = runs
                .iter()
                .filter(|r| r.axis_value == v)
                .filter_map(|r| r.outcome.as_ref().ok().map(|s| s.final_nll))
                .collect();
            let (mean, std) = if finals.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&finals) };
            SummaryRow {
                axis_value: v,
                mean_final_nll: mean,
                std_final_nll: std,
                n_seeds: finals.len(),
            }
        })
        .collect();
    Ok(SweepOutput {
        axis: spec.axis,
        runs,
        summary,
    })
}

/// Header line of the concatenated per-run CSV.
pub fn runs_header() -> &'static str {
    RECORD_HEADER
}
