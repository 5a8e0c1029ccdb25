//! Closed-loop run traces.
//!
//! A [`RunTrace`] is the complete, serializable record of one (strategy,
//! seed) run: what was simulated when, the hyperparameters after each
//! retrain, and the accuracy of the predicted satisfaction field against
//! ground truth at every iteration. Record 0 describes the initial design;
//! record t the state after iteration t. The terminal satisfaction field is
//! kept only when asked for — at 40k+ lattice points it dominates the file
//! size.

use serde::{Deserialize, Serialize};

use crate::sampling::{RefitSchedule, Strategy};
use crate::{Error, Result};

/// State after one loop iteration (iteration 0 = the initial design).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Lattice indices added this iteration, ascending.
    pub selected: Vec<usize>,
    /// Measurements aligned with `selected`.
    pub measurements: Vec<f64>,
    /// Kernel signal variance σ_f² after this iteration's (re)train.
    pub signal_variance: f64,
    /// Kernel lengthscales after this iteration's (re)train.
    pub lengthscales: Vec<f64>,
    /// Observation-noise standard deviation the model is using.
    pub noise_std: f64,
    /// MAE of p̂_sat against ground truth, when ground truth is known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    /// MAE after dropping the top 5% CDF-variance points.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae_drop05: Option<f64>,
    /// MAE after dropping the top 10% CDF-variance points.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae_drop10: Option<f64>,
    /// Training-set size after this iteration.
    pub n_train: usize,
}

/// Predicted satisfaction field over the full lattice at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionField {
    pub p_sat_hat: Vec<f64>,
    pub cdf_variance: Vec<f64>,
}

/// Everything needed to reproduce the run, echoed into its trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    /// Benchmark identifier (`analytic_field` / `linear_sde`).
    pub benchmark: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub n0: usize,
    pub iterations: usize,
    /// Points added per iteration (1 = sequential).
    pub batch_size: usize,
    /// Candidate-set size M_T for the batch sampler, when batching.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate_count: Option<usize>,
    /// ε_y given to the likelihood (initial value when noise is learned).
    pub noise_std: f64,
    pub learn_noise: bool,
    pub mle_restarts: usize,
    pub refit: RefitSchedule,
    /// Integrator step for simulated systems.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sde_step: Option<f64>,
    pub lattice_resolution: Vec<usize>,
}

/// Full record of one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub meta: TraceMeta,
    pub records: Vec<IterationRecord>,
    /// Terminal predicted field, when `save_field` was set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<SatisfactionField>,
    /// Wall-clock duration of the run in seconds (informational; excluded
    /// from the byte-reproducible CSV outputs).
    pub wall_time_s: f64,
    /// Set when the run aborted mid-loop; the records up to the failure are
    /// kept so partial progress stays inspectable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunTrace {
    /// Checks the bookkeeping invariants: training size grows by exactly
    /// `batch_size` per iteration from N₀, selections align with their
    /// measurements, and recorded MAE values are probabilities' errors.
    pub fn validate(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::InvalidArgument(
                "a trace needs at least the initial-design record".into(),
            ));
        }
        for (i, rec) in self.records.iter().enumerate() {
            if rec.iteration != i {
                return Err(Error::InvalidArgument(format!(
                    "record {i} carries iteration number {}",
                    rec.iteration
                )));
            }
            if rec.selected.len() != rec.measurements.len() {
                return Err(Error::DimensionMismatch {
                    context: "selected indices vs measurements",
                    expected: rec.selected.len(),
                    got: rec.measurements.len(),
                });
            }
            let expected_new = if i == 0 { self.meta.n0 } else { self.meta.batch_size };
            if rec.selected.len() != expected_new {
                return Err(Error::InvalidArgument(format!(
                    "iteration {i} added {} points, expected {expected_new}",
                    rec.selected.len()
                )));
            }
            let expected_train = self.meta.n0 + i * self.meta.batch_size;
            if rec.n_train != expected_train {
                return Err(Error::InvalidArgument(format!(
                    "iteration {i} reports n_train = {}, expected {expected_train}",
                    rec.n_train
                )));
            }
            for m in [rec.mae, rec.mae_drop05, rec.mae_drop10].into_iter().flatten() {
                if !(0.0..=1.0).contains(&m) {
                    return Err(Error::InvalidArgument(format!(
                        "iteration {i} records an MAE of {m} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// MAE of the last record, when ground truth was available.
    pub fn final_mae(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.mae)
    }

    /// The per-iteration MAE series (None entries where truth was absent).
    pub fn mae_series(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.mae).collect()
    }

    /// Total training-set size at the end of the trace.
    pub fn final_n_train(&self) -> usize {
        self.records.last().map_or(0, |r| r.n_train)
    }
}
