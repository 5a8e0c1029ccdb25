//! The select → simulate → retrain loop shared by the sequential and batch
//! drivers.
//!
//! One iteration costs `batch_size` simulations. The expensive part of each
//! iteration is the whole-lattice posterior sweep, so the loop maintains a
//! [`LatticePredictor`] cache: when hyperparameters are held (the refit
//! schedule says "extend"), the model's Cholesky factor grows in place and
//! the cache absorbs only the new rows; when hyperparameters are
//! re-optimized, the cache is rebuilt. Either way the sweep yields
//! bit-identical results to predicting point by point.
//!
//! Determinism contract: given (config, seed), a run is reproducible to the
//! bit. The caller's RNG drives the initial design and any strategy-level
//! randomness (the random baseline, candidate draws, the batch sampler);
//! measurement seeds derive from (run seed, lattice index) so every strategy
//! sees the same measurement at the same location under the same seed.

use rand::seq::index::sample as sample_indices;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dpp;
use crate::gp::{
    self, GpModel, LatticePredictor, LikelihoodHyperparams, PredictiveDist, TrainingSet,
};
use crate::sampling::{self, Lattice, MleSettings, SamplePool, Strategy};
use crate::systems::{self, BenchmarkSystem, SEED_DOMAIN_RUN};
use crate::trace::{IterationRecord, RunTrace, SatisfactionField, TraceMeta};
use crate::verify::{self, GroundTruthField, SatisfactionEstimate};
use crate::{Error, Result};

/// Batch-mode parameters; absent for the sequential loop.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BatchSettings {
    pub batch_size: usize,
    pub candidate_count: usize,
}

/// Everything one closed-loop run needs beyond the system and lattice.
pub(crate) struct LoopSettings<'a> {
    pub strategy: Strategy,
    pub batch: Option<BatchSettings>,
    pub n0: usize,
    pub iterations: usize,
    pub noise_std: f64,
    pub mle: MleSettings,
    pub run_seed: u64,
    pub truth: Option<&'a GroundTruthField>,
    pub save_field: bool,
}

impl LoopSettings<'_> {
    fn batch_size(&self) -> usize {
        self.batch.map_or(1, |b| b.batch_size)
    }

    fn validate(&self, lattice: &Lattice) -> Result<()> {
        if self.n0 < 2 {
            return Err(Error::Config {
                field: "n0".into(),
                message: format!("the initial design needs at least 2 points, got {}", self.n0),
            });
        }
        if let Some(b) = self.batch {
            if b.batch_size < 1 {
                return Err(Error::Config {
                    field: "batch_size".into(),
                    message: "batches must add at least one point".into(),
                });
            }
            if b.candidate_count < b.batch_size {
                return Err(Error::Config {
                    field: "candidate_count".into(),
                    message: format!(
                        "candidate count {} is smaller than the batch size {}",
                        b.candidate_count, b.batch_size
                    ),
                });
            }
        }
        let budget = self.n0 + self.iterations * self.batch_size();
        if budget > lattice.len() {
            return Err(Error::Config {
                field: "iterations".into(),
                message: format!(
                    "budget N₀ + T·M = {budget} exceeds the lattice size {}",
                    lattice.len()
                ),
            });
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config {
                field: "noise_std".into(),
                message: format!("need a finite ε_y ≥ 0, got {}", self.noise_std),
            });
        }
        if self.mle.restarts == 0 {
            return Err(Error::Config {
                field: "restarts".into(),
                message: "hyperparameter estimation needs at least one start".into(),
            });
        }
        if let Some(truth) = self.truth {
            truth.validate()?;
            if truth.p_sat_true.len() != lattice.len() {
                return Err(Error::DimensionMismatch {
                    context: "ground-truth field vs lattice",
                    expected: lattice.len(),
                    got: truth.p_sat_true.len(),
                });
            }
        }
        Ok(())
    }
}

/// Simulates each selected lattice point once, in parallel, with seeds
/// derived from (run seed, lattice index) — order and thread count cannot
/// change a single value.
fn simulate_batch(
    system: &BenchmarkSystem,
    lattice: &Lattice,
    indices: &[usize],
    run_seed: u64,
) -> Result<Vec<f64>> {
    indices
        .par_iter()
        .map(|&idx| {
            let seed = systems::derive_seed(SEED_DOMAIN_RUN, run_seed, idx as u64, 0);
            systems::simulate_measure(system, lattice.point(idx), seed).map(|s| s.y)
        })
        .collect()
}

struct LoopState<'a> {
    settings: &'a LoopSettings<'a>,
    system: &'a BenchmarkSystem,
    lattice: &'a Lattice,
    pool: SamplePool,
    train: TrainingSet,
    model: GpModel,
    predictor: LatticePredictor,
    dists: Vec<PredictiveDist>,
    records: Vec<IterationRecord>,
}

impl LoopState<'_> {
    fn record(&self, iteration: usize, selected: Vec<usize>, ys: Vec<f64>) -> Result<IterationRecord> {
        let noise = self.model.lik_h().noise_std;
        let (mae, mae05, mae10) = match self.settings.truth {
            Some(truth) => {
                let estimates: Vec<SatisfactionEstimate> = self
                    .dists
                    .iter()
                    .map(|&d| verify::estimate_from_dist(d, noise))
                    .collect();
                (
                    Some(sampling::mae(&estimates, truth)?),
                    Some(sampling::variance_filtered_mae(&estimates, truth, 0.05)?),
                    Some(sampling::variance_filtered_mae(&estimates, truth, 0.10)?),
                )
            }
            None => (None, None, None),
        };
        Ok(IterationRecord {
            iteration,
            selected,
            measurements: ys,
            signal_variance: self.model.kernel_h().signal_variance,
            lengthscales: self.model.kernel_h().lengthscales.clone(),
            noise_std: noise,
            mae,
            mae_drop05: mae05,
            mae_drop10: mae10,
            n_train: self.train.len(),
        })
    }

    /// Picks this iteration's new lattice indices from the previous
    /// posterior, ascending.
    fn select(&self, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        let available = self.pool.available();
        let noise = self.model.lik_h().noise_std;
        let mut selected = match self.settings.batch {
            None => {
                let pick = if self.settings.strategy == Strategy::Random {
                    use rand::Rng;
                    available[rng.gen_range(0..available.len())]
                } else {
                    let avail_dists: Vec<PredictiveDist> =
                        available.iter().map(|&i| self.dists[i]).collect();
                    let scores =
                        sampling::score_from_dists(self.settings.strategy, &avail_dists, noise);
                    available[sampling::argmax_position(&scores)]
                };
                vec![pick]
            }
            Some(b) => {
                let avail_dists: Vec<PredictiveDist> =
                    available.iter().map(|&i| self.dists[i]).collect();
                let scores =
                    sampling::score_from_dists(self.settings.strategy, &avail_dists, noise);
                dpp::select_batch(
                    self.settings.strategy,
                    &scores,
                    available,
                    self.lattice,
                    self.model.kernel_h(),
                    b.batch_size,
                    b.candidate_count,
                    rng,
                )?
            }
        };
        selected.sort_unstable();
        Ok(selected)
    }

    fn iterate(&mut self, t: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        let selected = self.select(rng)?;
        let ys = simulate_batch(self.system, self.lattice, &selected, self.settings.run_seed)?;
        let new_params: Vec<Vec<f64>> = selected
            .iter()
            .map(|&i| self.lattice.point(i).to_vec())
            .collect();
        for (&idx, (&y, p)) in selected.iter().zip(ys.iter().zip(&new_params)) {
            self.pool.mark_used(idx)?;
            self.train.push(p.clone(), y);
        }

        if self.settings.mle.refit.due(t) {
            // Warm-started re-optimization from the current hyperparameters.
            let lik = LikelihoodHyperparams {
                noise_std: self.model.lik_h().noise_std,
                learn_noise: self.settings.mle.learn_noise,
            };
            self.model = GpModel::fit_mle(
                self.train.clone(),
                self.model.kernel_h().clone(),
                lik,
                self.settings.mle.restarts,
            )?;
            self.predictor.rebuild(&self.model)?;
        } else {
            match self.model.extend(&new_params, &ys) {
                Ok(next) => {
                    self.model = next;
                    self.predictor.append(&self.model)?;
                }
                Err(err) => {
                    // Ill-conditioned Schur block: refactorize from scratch
                    // with the same hyperparameters (deterministic fallback).
                    log::debug!("incremental extension failed ({err}); refactorizing");
                    self.model = GpModel::fit(
                        self.train.clone(),
                        self.model.kernel_h().clone(),
                        *self.model.lik_h(),
                    )?;
                    self.predictor.rebuild(&self.model)?;
                }
            }
        }
        self.dists = self.predictor.evaluate(&self.model)?;
        let record = self.record(t, selected, ys)?;
        self.records.push(record);
        Ok(())
    }
}

/// Runs the full closed loop and assembles its trace.
///
/// Configuration and validation errors, and failures while standing up the
/// initial model, surface as `Err`. Once the initial record exists, a
/// failure mid-loop aborts the loop but returns the partial trace with its
/// `error` field set, so sibling runs and post-mortems keep the data.
pub(crate) fn run_loop(
    settings: &LoopSettings<'_>,
    system: &BenchmarkSystem,
    lattice: &Lattice,
    rng: &mut ChaCha8Rng,
) -> Result<RunTrace> {
    let started = std::time::Instant::now();
    system.validate()?;
    settings.validate(lattice)?;
    if system.dim() != lattice.dim() {
        return Err(Error::DimensionMismatch {
            context: "system dimension vs lattice",
            expected: system.dim(),
            got: lattice.dim(),
        });
    }

    // Initial design: uniform without replacement. Drawing happens before
    // any strategy-dependent RNG use, so strategies sharing a seed share
    // the design.
    let mut init_indices = sample_indices(rng, lattice.len(), settings.n0).into_vec();
    init_indices.sort_unstable();
    let init_ys = simulate_batch(system, lattice, &init_indices, settings.run_seed)?;

    let mut pool = SamplePool::new(lattice.len());
    for &idx in &init_indices {
        pool.mark_used(idx)?;
    }
    let train = TrainingSet::new(
        init_indices.iter().map(|&i| lattice.point(i).to_vec()).collect(),
        init_ys.clone(),
    );

    let spans: Vec<f64> = lattice.bounds().iter().map(|b| b[1] - b[0]).collect();
    let init_kernel = gp::moment_init(&init_ys, &spans)?;
    let init_lik = LikelihoodHyperparams {
        noise_std: settings.noise_std,
        learn_noise: settings.mle.learn_noise,
    };
    let model = GpModel::fit_mle(
        train.clone(),
        init_kernel,
        init_lik,
        settings.mle.restarts,
    )?;

    let capacity = settings.n0 + settings.iterations * settings.batch_size();
    let mut predictor = LatticePredictor::new(lattice.points(), capacity)?;
    predictor.rebuild(&model)?;
    let dists = predictor.evaluate(&model)?;

    let mut state = LoopState {
        settings,
        system,
        lattice,
        pool,
        train,
        model,
        predictor,
        dists,
        records: Vec::with_capacity(settings.iterations + 1),
    };
    let first = state.record(0, init_indices, init_ys)?;
    state.records.push(first);

    let mut error = None;
    for t in 1..=settings.iterations {
        if let Err(e) = state.iterate(t, rng) {
            log::warn!("run aborted at iteration {t}: {e}");
            error = Some(format!("iteration {t}: {e}"));
            break;
        }
    }

    let field = settings.save_field.then(|| {
        let noise = state.model.lik_h().noise_std;
        let mut p_sat_hat = Vec::with_capacity(state.dists.len());
        let mut cdf_variance = Vec::with_capacity(state.dists.len());
        for &d in &state.dists {
            let est = verify::estimate_from_dist(d, noise);
            p_sat_hat.push(est.p_sat_hat);
            cdf_variance.push(est.cdf_variance);
        }
        SatisfactionField {
            p_sat_hat,
            cdf_variance,
        }
    });

    let trace = RunTrace {
        meta: TraceMeta {
            benchmark: system.kind().to_string(),
            strategy: settings.strategy,
            seed: settings.run_seed,
            n0: settings.n0,
            iterations: settings.iterations,
            batch_size: settings.batch_size(),
            candidate_count: settings.batch.map(|b| b.candidate_count),
            noise_std: settings.noise_std,
            learn_noise: settings.mle.learn_noise,
            mle_restarts: settings.mle.restarts,
            refit: settings.mle.refit,
            sde_step: system.step(),
            lattice_resolution: lattice.resolution().to_vec(),
        },
        records: state.records,
        field,
        wall_time_s: started.elapsed().as_secs_f64(),
        error,
    };
    trace.validate()?;
    Ok(trace)
}
