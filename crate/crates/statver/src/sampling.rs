//! Acquisition strategies and the sequential closed-loop driver.
//!
//! The loop alternates between fitting a GP to the simulations run so far,
//! scoring every untried lattice point, and spending one simulation at the
//! best-scoring point:
//!
//! ```text
//! L ← N₀ random lattice points, simulate each once
//! repeat T times:
//!     fit GP to L
//!     θ̄ ← argmax over U of score(θ)
//!     simulate once at θ̄, move θ̄ from U to L
//! ```
//!
//! Four scores are supported, all oriented so that **higher is better**:
//!
//! * `cdf_variance_reduction` — Ṽ(θ|L), the local drop in CDF variance a
//!   simulation at θ would cause (the proposed criterion);
//! * `pdf_mean` — −|μ(θ)|, prioritizing the latent zero level set;
//! * `pdf_variance` — Σ(θ), the latent posterior variance;
//! * `random` — uniform (open-loop baseline); selection draws from the RNG.
//!
//! Ties are broken toward the lowest lattice index so a run is a pure
//! function of its configuration and seed. Accuracy is tracked as the mean
//! absolute error |p̂_sat − p_sat| over the lattice, optionally after
//! discarding the points with the highest CDF variance (the model's own
//! "don't trust me here" flag).

use std::cmp::Ordering;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::driver::{self, LoopSettings};
use crate::gp::{GpModel, PredictiveDist};
use crate::kernel::ParamVector;
use crate::systems::BenchmarkSystem;
use crate::trace::RunTrace;
use crate::verify::{self, GroundTruthField, SatisfactionEstimate};
use crate::{Error, Result};

/// A finite axis-aligned grid standing in for the continuous parameter set.
///
/// Points are stored row-major with the **last dimension varying fastest**;
/// index arithmetic and all tie-breaking rules rely on that ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    points: Vec<ParamVector>,
    bounds: Vec<[f64; 2]>,
    resolution: Vec<usize>,
}

impl Lattice {
    /// Validates the grid invariants: the point count matches the product of
    /// per-dimension resolutions, every point lies within bounds, and no two
    /// points coincide.
    pub fn new(
        points: Vec<ParamVector>,
        bounds: Vec<[f64; 2]>,
        resolution: Vec<usize>,
    ) -> Result<Self> {
        if bounds.len() != resolution.len() {
            return Err(Error::DimensionMismatch {
                context: "lattice bounds vs resolution",
                expected: bounds.len(),
                got: resolution.len(),
            });
        }
        let expected: usize = resolution.iter().product();
        if points.len() != expected || points.is_empty() {
            return Err(Error::DimensionMismatch {
                context: "lattice point count vs resolution product",
                expected,
                got: points.len(),
            });
        }
        let dim = bounds.len();
        for (i, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "lattice point dimension",
                    expected: dim,
                    got: p.len(),
                });
            }
            for (d, (&x, b)) in p.iter().zip(&bounds).enumerate() {
                let tol = 1e-12 * (b[1] - b[0]).abs();
                if !x.is_finite() || x < b[0] - tol || x > b[1] + tol {
                    return Err(Error::OutOfBounds {
                        index: i * dim + d,
                        value: x,
                        lo: b[0],
                        hi: b[1],
                    });
                }
            }
        }
        // Duplicate detection via a lexicographic sort of point indices.
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_unstable_by(|&a, &b| lex_cmp(&points[a], &points[b]));
        if order.windows(2).any(|w| points[w[0]] == points[w[1]]) {
            return Err(Error::InvalidArgument(
                "lattice contains duplicate points".into(),
            ));
        }
        Ok(Lattice {
            points,
            bounds,
            resolution,
        })
    }

    pub fn points(&self) -> &[ParamVector] {
        &self.points
    }

    pub fn point(&self, idx: usize) -> &[f64] {
        &self.points[idx]
    }

    pub fn bounds(&self) -> &[[f64; 2]] {
        &self.bounds
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// Partition of lattice indices into untried (U) and already-simulated (D).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePool {
    /// Untried indices, kept in ascending order.
    available: Vec<usize>,
    /// Used indices, in the order they were consumed.
    used: Vec<usize>,
}

impl SamplePool {
    pub fn new(lattice_len: usize) -> Self {
        SamplePool {
            available: (0..lattice_len).collect(),
            used: Vec::new(),
        }
    }

    /// Untried lattice indices in ascending order.
    pub fn available(&self) -> &[usize] {
        &self.available
    }

    /// Consumed lattice indices in consumption order.
    pub fn used(&self) -> &[usize] {
        &self.used
    }

    pub fn len(&self) -> usize {
        self.available.len() + self.used.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_available(&self, idx: usize) -> bool {
        self.available.binary_search(&idx).is_ok()
    }

    /// Moves one index from the available to the used side. Consuming an
    /// index twice is an error — each location is simulated at most once.
    pub fn mark_used(&mut self, idx: usize) -> Result<()> {
        match self.available.binary_search(&idx) {
            Ok(pos) => {
                self.available.remove(pos);
                self.used.push(idx);
                Ok(())
            }
            Err(_) => Err(Error::InvalidArgument(format!(
                "lattice index {idx} is not available (already used or out of range)"
            ))),
        }
    }
}

/// Acquisition criterion for the closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Proposed criterion: argmax of the CDF-variance reduction Ṽ(θ|L).
    CdfVarianceReduction,
    /// Baseline: closest latent mean to zero (score −|μ|).
    PdfMean,
    /// Baseline: largest latent posterior variance Σ.
    PdfVariance,
    /// Baseline: uniform over the untried pool.
    Random,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::CdfVarianceReduction,
        Strategy::PdfMean,
        Strategy::PdfVariance,
        Strategy::Random,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::CdfVarianceReduction => "cdf_variance_reduction",
            Strategy::PdfMean => "pdf_mean",
            Strategy::PdfVariance => "pdf_variance",
            Strategy::Random => "random",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown strategy '{s}' (expected one of: cdf_variance_reduction, \
                     pdf_mean, pdf_variance, random)"
                ))
            })
    }
}

/// How often the closed loop re-estimates hyperparameters as data arrives.
/// Between refits the model is extended with hyperparameters held fixed,
/// which is exact for the posterior and far cheaper than re-optimizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitSchedule {
    /// Re-run the hyperparameter search at every retrain step.
    EveryRetrain,
    /// Re-run it every n-th iteration (warm-started); extend otherwise.
    EveryN(usize),
    /// Optimize hyperparameters once on the initial design only.
    InitialOnly,
}

impl Default for RefitSchedule {
    fn default() -> Self {
        RefitSchedule::EveryRetrain
    }
}

impl RefitSchedule {
    /// Whether iteration `t` (1-based) re-optimizes hyperparameters.
    pub(crate) fn due(&self, t: usize) -> bool {
        match self {
            RefitSchedule::EveryRetrain => true,
            RefitSchedule::EveryN(n) => *n > 0 && t % n == 0,
            RefitSchedule::InitialOnly => false,
        }
    }
}

fn default_mle_restarts() -> usize {
    3
}

/// Hyperparameter-estimation settings for the closed loop.
///
/// Every field is individually optional in config files; a partial `[mle]`
/// table fills the rest from the defaults below.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MleSettings {
    /// Multi-start count for the likelihood ascent (≥ 1).
    #[serde(default = "default_mle_restarts")]
    pub restarts: usize,
    /// Whether the observation noise ε_y is estimated alongside the kernel.
    #[serde(default)]
    pub learn_noise: bool,
    /// Refit cadence; see [`RefitSchedule`].
    #[serde(default)]
    pub refit: RefitSchedule,
}

impl Default for MleSettings {
    fn default() -> Self {
        MleSettings {
            restarts: 3,
            learn_noise: false,
            refit: RefitSchedule::EveryRetrain,
        }
    }
}

/// Configuration for one sequential run (batch size 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialConfig {
    pub strategy: Strategy,
    /// Initial design size N₀ (uniform without replacement).
    pub n0: usize,
    /// Number of closed-loop iterations T; each spends one simulation.
    pub iterations: usize,
    /// Observation-noise standard deviation ε_y used by the GP likelihood
    /// (the starting value when `mle.learn_noise` is set).
    pub noise_std: f64,
    pub mle: MleSettings,
    /// Seed recorded in the trace; per-sample simulation seeds derive from
    /// it so that paired strategies see identical measurements.
    pub run_seed: u64,
    /// Whether the terminal satisfaction field is kept in the trace.
    pub save_field: bool,
}

/// One score per available point, aligned with `pool.available()` order.
///
/// This is the reference scoring path: it predicts through the model point
/// by point. The run drivers compute identical scores from their incremental
/// whole-lattice sweep.
pub fn score(
    strategy: Strategy,
    model: &GpModel,
    pool: &SamplePool,
    lattice: &Lattice,
) -> Result<Vec<f64>> {
    if pool.available().is_empty() {
        return Err(Error::InvalidArgument(
            "score requires a non-empty available pool".into(),
        ));
    }
    let mut dists = Vec::with_capacity(pool.available().len());
    for &idx in pool.available() {
        dists.push(model.predict(lattice.point(idx))?);
    }
    Ok(score_from_dists(
        strategy,
        &dists,
        model.lik_h().noise_std,
    ))
}

/// Strategy arithmetic shared by [`score`] and the run drivers; `dists` is
/// one predictive distribution per candidate, `noise_std` the model's
/// current ε̂_y.
pub(crate) fn score_from_dists(
    strategy: Strategy,
    dists: &[PredictiveDist],
    noise_std: f64,
) -> Vec<f64> {
    dists
        .iter()
        .map(|d| match strategy {
            Strategy::CdfVarianceReduction => verify::variance_reduction(*d, noise_std),
            Strategy::PdfMean => -d.mean.abs(),
            Strategy::PdfVariance => d.variance,
            Strategy::Random => 1.0,
        })
        .collect()
}

/// Position of the best score, ties broken toward the earliest entry.
pub(crate) fn argmax_position(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Picks the next lattice index to simulate: the argmax of the strategy's
/// score, ties toward the lowest index; the random baseline draws uniformly
/// from the available pool instead.
pub fn select_next<R: Rng + ?Sized>(
    strategy: Strategy,
    model: &GpModel,
    pool: &SamplePool,
    lattice: &Lattice,
    rng: &mut R,
) -> Result<usize> {
    let available = pool.available();
    if available.is_empty() {
        return Err(Error::InvalidArgument(
            "select_next requires a non-empty available pool".into(),
        ));
    }
    if strategy == Strategy::Random {
        return Ok(available[rng.gen_range(0..available.len())]);
    }
    let scores = score(strategy, model, pool, lattice)?;
    Ok(available[argmax_position(&scores)])
}

/// Runs the sequential closed loop and returns its full trace.
///
/// The initial design is drawn uniformly without replacement from the
/// lattice using `rng`; two runs configured with different strategies but
/// the same seed therefore start from the identical training set. When
/// `truth` is given, every iteration records the MAE of the predicted
/// satisfaction field against it (plain, and with the top 5% / 10%
/// CDF-variance points discarded).
pub fn run_sequential(
    config: &SequentialConfig,
    system: &BenchmarkSystem,
    lattice: &Lattice,
    truth: Option<&GroundTruthField>,
    rng: &mut ChaCha8Rng,
) -> Result<RunTrace> {
    let settings = LoopSettings {
        strategy: config.strategy,
        batch: None,
        n0: config.n0,
        iterations: config.iterations,
        noise_std: config.noise_std,
        mle: config.mle,
        run_seed: config.run_seed,
        truth,
        save_field: config.save_field,
    };
    driver::run_loop(&settings, system, lattice, rng)
}

/// Mean absolute error of the predicted satisfaction probabilities against
/// ground truth over the full lattice.
pub fn mae(estimates: &[SatisfactionEstimate], truth: &GroundTruthField) -> Result<f64> {
    if estimates.len() != truth.p_sat_true.len() {
        return Err(Error::DimensionMismatch {
            context: "satisfaction estimates vs ground truth",
            expected: truth.p_sat_true.len(),
            got: estimates.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("mae over an empty lattice".into()));
    }
    let total: f64 = estimates
        .iter()
        .zip(&truth.p_sat_true)
        .map(|(e, &p)| (e.p_sat_hat - p).abs())
        .sum();
    Ok(total / estimates.len() as f64)
}

/// MAE after discarding the `ceil(drop_fraction · n)` lattice points with
/// the highest CDF variance — the "remove what the model itself distrusts"
/// metric. Ties at the variance threshold are dropped in index order.
pub fn variance_filtered_mae(
    estimates: &[SatisfactionEstimate],
    truth: &GroundTruthField,
    drop_fraction: f64,
) -> Result<f64> {
    if !(0.0..1.0).contains(&drop_fraction) {
        return Err(Error::InvalidArgument(format!(
            "drop_fraction must lie in [0, 1), got {drop_fraction}"
        )));
    }
    if estimates.len() != truth.p_sat_true.len() {
        return Err(Error::DimensionMismatch {
            context: "satisfaction estimates vs ground truth",
            expected: truth.p_sat_true.len(),
            got: estimates.len(),
        });
    }
    let n = estimates.len();
    let drop = (drop_fraction * n as f64).ceil() as usize;
    if drop >= n {
        return Err(Error::InvalidArgument(format!(
            "dropping {drop} of {n} points leaves nothing to average"
        )));
    }
    // Highest variance first; equal variances resolve to the lower index.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| {
        estimates[b]
            .cdf_variance
            .total_cmp(&estimates[a].cdf_variance)
            .then(a.cmp(&b))
    });
    let mut dropped = vec![false; n];
    for &i in &order[..drop] {
        dropped[i] = true;
    }
    let total: f64 = (0..n)
        .filter(|&i| !dropped[i])
        .map(|i| (estimates[i].p_sat_hat - truth.p_sat_true[i]).abs())
        .sum();
    Ok(total / (n - drop) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Strategy;
    use crate::gp::{LikelihoodHyperparams, TrainingSet};
    use crate::kernel::KernelHyperparams;
    use crate::systems;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn grid_2d(res: usize) -> Lattice {
        systems::build_lattice(&[[-1.0, 1.0], [-1.0, 1.0]], &[res, res]).unwrap()
    }

    fn toy_model(noise_std: f64) -> GpModel {
        let train = TrainingSet::new(
            vec![
                vec![-0.8, -0.2],
                vec![0.1, 0.7],
                vec![0.6, -0.5],
                vec![-0.3, 0.4],
            ],
            vec![0.4, -0.7, 0.2, 0.9],
        );
        GpModel::fit(
            train,
            KernelHyperparams {
                signal_variance: 0.8,
                lengthscales: vec![0.7, 0.9],
            },
            LikelihoodHyperparams::fixed(noise_std),
        )
        .unwrap()
    }

    #[test]
    fn lattice_rejects_bad_shapes() {
        let pts = vec![vec![0.0], vec![0.5], vec![1.0]];
        assert!(Lattice::new(pts.clone(), vec![[0.0, 1.0]], vec![3]).is_ok());
        // Count mismatch.
        assert!(Lattice::new(pts.clone(), vec![[0.0, 1.0]], vec![4]).is_err());
        // Out of bounds.
        assert!(Lattice::new(
            vec![vec![0.0], vec![0.5], vec![2.0]],
            vec![[0.0, 1.0]],
            vec![3]
        )
        .is_err());
        // Duplicates.
        assert!(Lattice::new(
            vec![vec![0.0], vec![0.5], vec![0.5]],
            vec![[0.0, 1.0]],
            vec![3]
        )
        .is_err());
        // Dimension mismatch inside a point.
        assert!(Lattice::new(
            vec![vec![0.0], vec![0.5, 0.1], vec![1.0]],
            vec![[0.0, 1.0]],
            vec![3]
        )
        .is_err());
    }

    #[test]
    fn pool_partitions_and_rejects_resampling() {
        let mut pool = SamplePool::new(5);
        assert_eq!(pool.available(), &[0, 1, 2, 3, 4]);
        pool.mark_used(2).unwrap();
        pool.mark_used(4).unwrap();
        assert_eq!(pool.available(), &[0, 1, 3]);
        assert_eq!(pool.used(), &[2, 4]);
        assert!(pool.mark_used(2).is_err());
        assert!(pool.mark_used(99).is_err());
        assert_eq!(pool.len(), 5);
    }

    proptest! {
        #[test]
        fn pool_conservation_under_any_consumption_order(
            n in 1usize..40,
            picks in proptest::collection::vec(0usize..40, 0..60),
        ) {
            let mut pool = SamplePool::new(n);
            let mut used_ref = Vec::new();
            for p in picks {
                let idx = p % n;
                if pool.is_available(idx) {
                    pool.mark_used(idx).unwrap();
                    used_ref.push(idx);
                } else {
                    prop_assert!(pool.mark_used(idx).is_err());
                }
                // The partition always covers 0..n exactly once.
                let mut all: Vec<usize> =
                    pool.available().iter().chain(pool.used()).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                prop_assert_eq!(pool.used(), &used_ref[..]);
            }
        }

        #[test]
        fn argmax_invariant_to_positive_scaling(
            scores in proptest::collection::vec(0.0f64..1e6, 1..50),
            scale in 1e-6f64..1e6,
        ) {
            let scaled: Vec<f64> = scores.iter().map(|s| s * scale).collect();
            prop_assert_eq!(argmax_position(&scores), argmax_position(&scaled));
        }
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_index() {
        assert_eq!(argmax_position(&[0.2, 0.7]), 1);
        assert_eq!(argmax_position(&[0.5, 0.5, 0.5]), 0);
        assert_eq!(argmax_position(&[0.1, 0.9, 0.9]), 1);
    }

    #[test]
    fn cdf_variance_reduction_scores_compose_from_verify() {
        let model = toy_model(0.2);
        let lattice = grid_2d(4);
        let mut pool = SamplePool::new(lattice.len());
        pool.mark_used(3).unwrap();
        pool.mark_used(7).unwrap();
        let scores = score(Strategy::CdfVarianceReduction, &model, &pool, &lattice).unwrap();
        for (&idx, &s) in pool.available().iter().zip(&scores) {
            let d = model.predict(lattice.point(idx)).unwrap();
            let expected = verify::variance_reduction(d, model.lik_h().noise_std);
            assert_eq!(s, expected);
        }
    }

    #[test]
    fn pdf_variance_scores_zero_at_noise_free_training_point() {
        // A noise-free GP interpolates: at a training location the latent
        // variance collapses, so the exploration score vanishes there.
        let train = TrainingSet::new(vec![vec![0.0, 0.0], vec![0.5, 0.5]], vec![0.3, -0.1]);
        let model = GpModel::fit(
            train,
            KernelHyperparams {
                signal_variance: 1.0,
                lengthscales: vec![0.5, 0.5],
            },
            LikelihoodHyperparams::fixed(0.0),
        )
        .unwrap();
        let d = model.predict(&[0.0, 0.0]).unwrap();
        assert!(d.variance.abs() < 1e-8);
        assert!(
            score_from_dists(Strategy::PdfVariance, &[d], 0.0)[0].abs() < 1e-8
        );
    }

    #[test]
    fn pdf_mean_peaks_at_zero_latent_mean() {
        let dists = [
            PredictiveDist { mean: -0.4, variance: 0.1 },
            PredictiveDist { mean: 0.0, variance: 0.1 },
            PredictiveDist { mean: 0.2, variance: 0.1 },
        ];
        let scores = score_from_dists(Strategy::PdfMean, &dists, 0.1);
        assert_eq!(argmax_position(&scores), 1);
        assert_eq!(scores[1], 0.0);
    }

    #[test]
    fn cdf_variance_reduction_peaks_at_zero_mean_on_synthetic_field() {
        // Equal variances, means sweeping through zero: the exp(−μ²/ε²)
        // factor makes μ=0 the single-factor maximizer.
        let dists: Vec<PredictiveDist> = [-0.6, -0.3, 0.0, 0.3, 0.6]
            .iter()
            .map(|&m| PredictiveDist { mean: m, variance: 0.2 })
            .collect();
        let scores = score_from_dists(Strategy::CdfVarianceReduction, &dists, 0.15);
        assert_eq!(argmax_position(&scores), 2);
    }

    #[test]
    fn select_next_is_deterministic_and_respects_scores() {
        let model = toy_model(0.2);
        let lattice = grid_2d(5);
        let pool = SamplePool::new(lattice.len());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = select_next(Strategy::CdfVarianceReduction, &model, &pool, &lattice, &mut rng)
            .unwrap();
        let b = select_next(Strategy::CdfVarianceReduction, &model, &pool, &lattice, &mut rng)
            .unwrap();
        assert_eq!(a, b, "argmax selection must not consume the RNG");
        let scores = score(Strategy::CdfVarianceReduction, &model, &pool, &lattice).unwrap();
        assert_eq!(a, pool.available()[argmax_position(&scores)]);
    }

    #[test]
    fn select_next_single_point_any_strategy() {
        let model = toy_model(0.1);
        let lattice = grid_2d(3);
        let mut pool = SamplePool::new(lattice.len());
        for idx in 0..lattice.len() - 1 {
            pool.mark_used(idx).unwrap();
        }
        let only = lattice.len() - 1;
        for strategy in Strategy::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            assert_eq!(
                select_next(strategy, &model, &pool, &lattice, &mut rng).unwrap(),
                only
            );
        }
    }

    #[test]
    fn random_selection_stays_in_pool_and_follows_the_stream() {
        let model = toy_model(0.1);
        let lattice = grid_2d(4);
        let mut pool = SamplePool::new(lattice.len());
        pool.mark_used(0).unwrap();
        pool.mark_used(5).unwrap();
        let mut rng_a = ChaCha8Rng::seed_from_u64(11);
        let mut rng_b = ChaCha8Rng::seed_from_u64(11);
        let a = select_next(Strategy::Random, &model, &pool, &lattice, &mut rng_a).unwrap();
        let b = select_next(Strategy::Random, &model, &pool, &lattice, &mut rng_b).unwrap();
        assert_eq!(a, b);
        assert!(pool.is_available(a));
    }

    fn estimates_from(values: &[(f64, f64)]) -> Vec<SatisfactionEstimate> {
        values
            .iter()
            .map(|&(p, v)| SatisfactionEstimate {
                p_sat_hat: p,
                cdf_variance: v,
            })
            .collect()
    }

    fn truth_from(ps: &[f64]) -> GroundTruthField {
        GroundTruthField {
            lattice: ps.iter().map(|_| vec![0.0]).collect(),
            p_sat_true: ps.to_vec(),
        }
    }

    #[test]
    fn mae_matches_hand_computations() {
        let truth = truth_from(&[0.0, 1.0, 1.0]);
        let exact = estimates_from(&[(0.0, 0.1), (1.0, 0.1), (1.0, 0.1)]);
        assert_eq!(mae(&exact, &truth).unwrap(), 0.0);

        let half = estimates_from(&[(0.5, 0.1), (0.5, 0.1), (0.5, 0.1)]);
        assert_abs_diff_eq!(mae(&half, &truth).unwrap(), 0.5, epsilon = 1e-15);

        let spot = estimates_from(&[(0.2, 0.1), (0.8, 0.1), (0.5, 0.1)]);
        assert_abs_diff_eq!(
            mae(&spot, &truth).unwrap(),
            (0.2 + 0.2 + 0.5) / 3.0,
            epsilon = 1e-15
        );

        assert!(mae(&spot[..2], &truth).is_err());
    }

    #[test]
    fn variance_filter_drops_highest_variance_points() {
        let truth = truth_from(&[0.0, 0.0, 0.0, 0.0]);
        // Highest variance carries the largest error; dropping 25% removes it.
        let est = estimates_from(&[(0.9, 0.8), (0.1, 0.2), (0.2, 0.3), (0.05, 0.1)]);
        let full = mae(&est, &truth).unwrap();
        let filtered = variance_filtered_mae(&est, &truth, 0.25).unwrap();
        assert_abs_diff_eq!(full, (0.9 + 0.1 + 0.2 + 0.05) / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(filtered, (0.1 + 0.2 + 0.05) / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn variance_filter_zero_fraction_equals_mae() {
        let truth = truth_from(&[0.3, 0.7, 0.1]);
        let est = estimates_from(&[(0.4, 0.5), (0.6, 0.2), (0.3, 0.9)]);
        assert_eq!(
            variance_filtered_mae(&est, &truth, 0.0).unwrap(),
            mae(&est, &truth).unwrap()
        );
    }

    #[test]
    fn variance_filter_ties_drop_lowest_indices_first() {
        let truth = truth_from(&[0.0, 0.0, 0.0, 0.0]);
        let est = estimates_from(&[(0.4, 0.5), (0.3, 0.5), (0.2, 0.5), (0.1, 0.5)]);
        // ceil(0.3·4) = 2 → indices 0 and 1 go.
        let filtered = variance_filtered_mae(&est, &truth, 0.3).unwrap();
        assert_abs_diff_eq!(filtered, (0.2 + 0.1) / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn variance_filter_rejects_bad_fractions() {
        let truth = truth_from(&[0.0]);
        let est = estimates_from(&[(0.4, 0.5)]);
        assert!(variance_filtered_mae(&est, &truth, 1.0).is_err());
        assert!(variance_filtered_mae(&est, &truth, -0.1).is_err());
        // ceil(0.5·1) = 1 point dropped of 1 → nothing left.
        assert!(variance_filtered_mae(&est, &truth, 0.5).is_err());
    }
}
