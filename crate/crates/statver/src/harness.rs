//! Experiment harness: config files, the paired-seed strategy grid, and
//! plot-ready outputs.
//!
//! A config describes one benchmark and a grid of (strategy, seed) runs.
//! Every strategy is run once per seed, and each run re-seeds its generator
//! from the seed alone — so all strategies sharing a seed draw the identical
//! initial design and identical measurement stream, making their error
//! series directly comparable pair by pair.
//!
//! Outputs per run: `trace_<strategy>_<seed>.json` (the full [`RunTrace`])
//! and `trace_<strategy>_<seed>.csv` with the columns
//! `iter,strategy,seed,mae,mae_drop05,mae_drop10,n_train`. After the grid, a
//! `summary.csv` aggregates mean ± std MAE per iteration and strategy, the
//! fraction of paired seeds where the reference strategy outperforms or
//! matches each competitor, and the final-iteration percent improvement.
//! All randomness flows from the config, so re-running a config reproduces
//! every CSV byte for byte.
//!
//! Ground truth is computed once per benchmark and cached next to the traces
//! as `ground_truth_<key>.json`, keyed by a hash of everything the field
//! depends on (benchmark parameters, lattice resolution, and the Monte-Carlo
//! draw count for simulated systems). The Monte-Carlo base seed is the key
//! itself, so a deleted cache file recomputes to identical contents.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::driver::{self, BatchSettings, LoopSettings};
use crate::sampling::{Lattice, MleSettings, Strategy};
use crate::systems::{self, AnalyticField, BenchmarkSystem, LinearSde};
use crate::trace::RunTrace;
use crate::verify::GroundTruthField;
use crate::{Error, Result};

/// Benchmark section of a config. `kind` selects the system; the remaining
/// keys are optional overrides of that benchmark's defaults, and keys that
/// do not apply to the selected kind are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// `analytic_field` or `linear_sde`.
    pub kind: String,
    /// Parameter-space box, one `[lo, hi]` per dimension.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
    /// Measurement-noise standard deviation (analytic surface only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    /// Requirement formula (simulated systems only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<String>,
    /// Integrator step (simulated systems only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    /// Trajectory horizon in time units (simulated systems only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Diffusion coefficient (simulated systems only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<f64>,
    /// Initial state [x, v] (simulated systems only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<[f64; 2]>,
}

impl BenchmarkConfig {
    fn reject(&self, cond: bool, field: &'static str) -> Result<()> {
        if cond {
            return Err(Error::Config {
                field,
                message: format!("key does not apply to benchmark kind `{}`", self.kind),
            });
        }
        Ok(())
    }

    /// Resolves the section into a concrete system, applying per-benchmark
    /// defaults for absent keys.
    pub fn to_system(&self) -> Result<BenchmarkSystem> {
        let system = match self.kind.as_str() {
            "analytic_field" => {
                self.reject(self.spec.is_some(), "spec")?;
                self.reject(self.step.is_some(), "step")?;
                self.reject(self.horizon.is_some(), "horizon")?;
                self.reject(self.diffusion.is_some(), "diffusion")?;
                self.reject(self.x0.is_some(), "x0")?;
                let mut s = AnalyticField::default_benchmark();
                if let Some(b) = &self.bounds {
                    s.bounds = b.clone();
                }
                if let Some(n) = self.noise_std {
                    s.noise_std = n;
                }
                BenchmarkSystem::AnalyticField(s)
            }
            "linear_sde" => {
                self.reject(self.noise_std.is_some(), "noise_std")?;
                let mut s = LinearSde::default_benchmark()?;
                if let Some(b) = &self.bounds {
                    s.bounds = b.clone();
                }
                if let Some(text) = &self.spec {
                    s.spec = crate::stl::parse(text)?;
                    s.spec_text = text.clone();
                }
                if let Some(v) = self.step {
                    s.step = v;
                }
                if let Some(v) = self.horizon {
                    s.horizon = v;
                }
                if let Some(v) = self.diffusion {
                    s.diffusion = v;
                }
                if let Some(v) = self.x0 {
                    s.x0 = v;
                }
                BenchmarkSystem::LinearSde(s)
            }
            other => {
                return Err(Error::Config {
                    field: "kind",
                    message: format!(
                        "unknown benchmark `{other}` (expected `analytic_field` or `linear_sde`)"
                    ),
                })
            }
        };
        system.validate()?;
        Ok(system)
    }
}

/// Lattice section: grid resolution per parameter dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub resolution: Vec<usize>,
}

/// Seeds are given either as an inclusive range string (`"1..20"`) or an
/// explicit list (`[3, 17, 99]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Range(String),
    List(Vec<u64>),
}

impl SeedSpec {
    pub fn resolve(&self) -> Result<Vec<u64>> {
        let seeds = match self {
            SeedSpec::Range(s) => parse_seed_spec(s)?,
            SeedSpec::List(v) => v.clone(),
        };
        if seeds.is_empty() {
            return Err(Error::Config {
                field: "seeds",
                message: "at least one seed is required".into(),
            });
        }
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config {
                field: "seeds",
                message: "seeds must be distinct".into(),
            });
        }
        Ok(seeds)
    }
}

/// Parses `"a..b"` (inclusive) or a comma-separated list (`"1,2,5"`).
pub fn parse_seed_spec(text: &str) -> Result<Vec<u64>> {
    let bad = |message: String| Error::Config {
        field: "seeds",
        message,
    };
    let text = text.trim();
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo
            .trim()
            .parse()
            .map_err(|_| bad(format!("`{text}`: range start is not an integer")))?;
        let hi: u64 = hi
            .trim()
            .parse()
            .map_err(|_| bad(format!("`{text}`: range end is not an integer")))?;
        if lo > hi {
            return Err(bad(format!("`{text}`: empty range")));
        }
        return Ok((lo..=hi).collect());
    }
    text.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| bad(format!("`{part}` is not an integer seed")))
        })
        .collect()
}

fn default_batch_size() -> usize {
    1
}

fn default_candidate_count() -> usize {
    1000
}

/// Run section: the strategy × seed grid and loop sizing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub strategies: Vec<Strategy>,
    /// Initial design size N₀.
    pub n0: usize,
    /// Total simulation budget (initial design + all batches).
    pub n_total: usize,
    /// Points per batch M; 1 runs the sequential loop.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Candidates drawn per batch M_T (batch mode only).
    #[serde(default = "default_candidate_count")]
    pub candidate_count: usize,
    pub seeds: SeedSpec,
    /// Observation-noise standard deviation ε_y assumed by the GP.
    pub noise_std: f64,
    /// Keep the terminal satisfaction field in each trace (large).
    #[serde(default)]
    pub save_field: bool,
}

fn default_mc_draws() -> usize {
    2000
}

/// Ground-truth section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthConfig {
    /// Monte-Carlo draws per lattice point for simulated systems (the
    /// analytic surface has a closed form and ignores this).
    #[serde(default = "default_mc_draws")]
    pub mc_draws: usize,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        GroundTruthConfig {
            mc_draws: default_mc_draws(),
        }
    }
}

/// Output section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// A full experiment description, one TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkConfig,
    pub lattice: LatticeConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub mle: MleSettings,
    #[serde(default)]
    pub ground_truth: GroundTruthConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Decode {
            path: origin.into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn system(&self) -> Result<BenchmarkSystem> {
        self.benchmark.to_system()
    }

    pub fn lattice(&self) -> Result<Lattice> {
        let system = self.system()?;
        systems::build_lattice(system.bounds(), &self.lattice.resolution)
    }

    /// Closed-loop iteration count T = (N_total − N₀)/M.
    pub fn iterations(&self) -> usize {
        (self.run.n_total - self.run.n0) / self.run.batch_size
    }

    /// Field-level validation of every cross-section invariant.
    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if r.strategies.is_empty() {
            return Err(Error::Config {
                field: "strategies",
                message: "at least one strategy is required".into(),
            });
        }
        let mut names: Vec<&str> = r.strategies.iter().map(|s| s.name()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config {
                field: "strategies",
                message: "strategies must be distinct".into(),
            });
        }
        if r.n0 < 2 {
            return Err(Error::Config {
                field: "n0",
                message: format!("the initial design needs at least 2 points, got {}", r.n0),
            });
        }
        if r.n_total < r.n0 {
            return Err(Error::Config {
                field: "n_total",
                message: format!("budget {} is below the initial design size {}", r.n_total, r.n0),
            });
        }
        if r.batch_size < 1 {
            return Err(Error::Config {
                field: "batch_size",
                message: "batches must add at least one point".into(),
            });
        }
        if r.batch_size > 1 && r.candidate_count < r.batch_size {
            return Err(Error::Config {
                field: "candidate_count",
                message: format!(
                    "candidate count {} is smaller than the batch size {}",
                    r.candidate_count, r.batch_size
                ),
            });
        }
        if (r.n_total - r.n0) % r.batch_size != 0 {
            return Err(Error::Config {
                field: "n_total",
                message: format!(
                    "budget beyond the initial design ({}) is not a multiple of the batch size {}",
                    r.n_total - r.n0,
                    r.batch_size
                ),
            });
        }
        if !(r.noise_std.is_finite() && r.noise_std >= 0.0) {
            return Err(Error::Config {
                field: "noise_std",
                message: format!("must be finite and non-negative, got {}", r.noise_std),
            });
        }
        let lattice = self.lattice()?;
        if r.n_total > lattice.len() {
            return Err(Error::Config {
                field: "n_total",
                message: format!(
                    "budget {} exceeds the lattice size {}",
                    r.n_total,
                    lattice.len()
                ),
            });
        }
        if matches!(self.system()?, BenchmarkSystem::LinearSde(_)) && self.ground_truth.mc_draws == 0
        {
            return Err(Error::Config {
                field: "mc_draws",
                message: "Monte-Carlo ground truth needs at least one draw".into(),
            });
        }
        r.seeds.resolve()?;
        if self.mle.restarts < 1 {
            return Err(Error::Config {
                field: "restarts",
                message: "hyperparameter estimation needs at least one start".into(),
            });
        }
        Ok(())
    }
}

/// Cache key for the ground-truth field: FNV-1a over a canonical rendering
/// of everything the field depends on. Doubles as the Monte-Carlo base seed.
pub fn ground_truth_key(
    system: &BenchmarkSystem,
    resolution: &[usize],
    mc_draws: usize,
) -> u64 {
    let canonical = match system {
        BenchmarkSystem::AnalyticField(s) => format!(
            "analytic_field|bounds={:?}|noise_std={:?}|resolution={resolution:?}",
            s.bounds, s.noise_std
        ),
        BenchmarkSystem::LinearSde(s) => format!(
            "linear_sde|bounds={:?}|spec={}|step={:?}|horizon={:?}|diffusion={:?}|x0={:?}|resolution={resolution:?}|mc_draws={mc_draws}",
            s.bounds, s.spec_text, s.step, s.horizon, s.diffusion, s.x0
        ),
    };
    let mut h = fnv::FnvHasher::default();
    h.write(canonical.as_bytes());
    h.finish()
}

fn ground_truth_path(dir: &Path, key: u64) -> PathBuf {
    dir.join(format!("ground_truth_{key:016x}.json"))
}

/// Loads the cached ground-truth field for this config, or computes and
/// caches it. The cache lives in the output directory.
pub fn load_or_compute_ground_truth(
    config: &ExperimentConfig,
    system: &BenchmarkSystem,
    lattice: &Lattice,
) -> Result<GroundTruthField> {
    let key = ground_truth_key(system, &config.lattice.resolution, config.ground_truth.mc_draws);
    let path = ground_truth_path(&config.output.dir, key);
    if path.exists() {
        let text =
            fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let field: GroundTruthField = serde_json::from_str(&text).map_err(|e| Error::Decode {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if field.lattice.len() == lattice.len() {
            field.validate()?;
            log::info!("ground truth loaded from {}", path.display());
            return Ok(field);
        }
        log::warn!(
            "cached ground truth at {} does not match the lattice; recomputing",
            path.display()
        );
    }
    let started = Instant::now();
    let field = match system {
        BenchmarkSystem::AnalyticField(_) => {
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            systems::ground_truth(system, lattice, 0, &mut rng)?
        }
        BenchmarkSystem::LinearSde(_) => {
            systems::mc_ground_truth(system, lattice, config.ground_truth.mc_draws, key)?
        }
    };
    log::info!(
        "ground truth over {} points computed in {:.1}s",
        lattice.len(),
        started.elapsed().as_secs_f64()
    );
    fs::create_dir_all(&config.output.dir)
        .map_err(|e| Error::io(config.output.dir.display().to_string(), e))?;
    let json = serde_json::to_string(&field).expect("ground truth serializes");
    fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(field)
}

/// One (strategy, seed) run that did not complete cleanly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFailure {
    pub strategy: Strategy,
    pub seed: u64,
    pub message: String,
}

/// Everything `run_experiment` produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    /// All traces, including partial ones (their `error` field is set).
    pub traces: Vec<RunTrace>,
    pub failures: Vec<RunFailure>,
    pub summary: Option<Summary>,
}

fn trace_basename(strategy: Strategy, seed: u64) -> String {
    format!("trace_{}_{seed}", strategy.name())
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders one trace as CSV (`iter,strategy,seed,mae,mae_drop05,mae_drop10,n_train`).
pub fn trace_csv(trace: &RunTrace) -> String {
    let mut out = String::from("iter,strategy,seed,mae,mae_drop05,mae_drop10,n_train\n");
    for r in &trace.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iteration,
            trace.meta.strategy.name(),
            trace.meta.seed,
            opt_cell(r.mae),
            opt_cell(r.mae_drop05),
            opt_cell(r.mae_drop10),
            r.n_train
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Writes `trace_<strategy>_<seed>.json` and the matching CSV.
pub fn write_trace_files(dir: &Path, trace: &RunTrace) -> Result<()> {
    let base = trace_basename(trace.meta.strategy, trace.meta.seed);
    let json_path = dir.join(format!("{base}.json"));
    let json = serde_json::to_string(trace).expect("traces serialize");
    fs::write(&json_path, json).map_err(|e| Error::io(json_path.display().to_string(), e))?;
    let csv_path = dir.join(format!("{base}.csv"));
    fs::write(&csv_path, trace_csv(trace))
        .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    Ok(())
}

/// Runs the full strategy × seed grid described by the config.
///
/// Each run writes its trace files as soon as it finishes. A failing run is
/// recorded (and its partial trace kept, when one exists) without aborting
/// the remaining grid. After the grid, successful traces are summarized into
/// `summary.csv`; failures, if any, land in `failures.json`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let system = config.system()?;
    let lattice = config.lattice()?;
    let out_dir = &config.output.dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let truth = load_or_compute_ground_truth(config, &system, &lattice)?;
    let seeds = config.run.seeds.resolve()?;
    let iterations = config.iterations();
    let batch = (config.run.batch_size > 1).then_some(BatchSettings {
        batch_size: config.run.batch_size,
        candidate_count: config.run.candidate_count,
    });

    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for &seed in &seeds {
        for &strategy in &config.run.strategies {
            let settings = LoopSettings {
                strategy,
                batch,
                n0: config.run.n0,
                iterations,
                noise_std: config.run.noise_std,
                mle: config.mle,
                run_seed: seed,
                truth: Some(&truth),
                save_field: config.run.save_field,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match driver::run_loop(&settings, &system, &lattice, &mut rng) {
                Ok(trace) => {
                    write_trace_files(out_dir, &trace)?;
                    match (&trace.error, trace.final_mae()) {
                        (Some(message), _) => {
                            log::warn!("{strategy} seed {seed} aborted: {message}");
                            failures.push(RunFailure {
                                strategy,
                                seed,
                                message: message.clone(),
                            });
                        }
                        (None, Some(mae)) => log::info!(
                            "{strategy} seed {seed}: final MAE {mae:.5} in {:.1}s",
                            trace.wall_time_s
                        ),
                        (None, None) => {
                            log::info!("{strategy} seed {seed} done in {:.1}s", trace.wall_time_s)
                        }
                    }
                    traces.push(trace);
                }
                Err(e) => {
                    log::warn!("{strategy} seed {seed} failed: {e}");
                    failures.push(RunFailure {
                        strategy,
                        seed,
                        message: e.to_string(),
                    });
                }
            }
        }
    }

    let complete: Vec<RunTrace> = traces.iter().filter(|t| t.error.is_none()).cloned().collect();
    let summary = if complete.is_empty() {
        None
    } else {
        let summary = summarize(&complete)?;
        let path = out_dir.join("summary.csv");
        fs::write(&path, summary_csv(&summary))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Some(summary)
    };
    if !failures.is_empty() {
        let path = out_dir.join("failures.json");
        let json = serde_json::to_string_pretty(&failures).expect("failures serialize");
        fs::write(&path, json).map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(ExperimentOutcome {
        traces,
        failures,
        summary,
    })
}

/// One row of the aggregate table: a (strategy, iteration) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub iteration: usize,
    pub strategy: Strategy,
    /// Paired seeds contributing to this cell.
    pub n_runs: usize,
    pub mean_mae: f64,
    /// Sample standard deviation across seeds (0 for a single run).
    pub std_mae: f64,
    /// Fraction of shared seeds where the reference strategy's MAE is ≤ this
    /// strategy's (1.0 on the reference row itself).
    pub outperform_or_match_vs_proposed: f64,
    /// Final-iteration improvement of the reference over this strategy, as a
    /// percentage of this strategy's mean MAE; set only on final rows.
    pub final_improvement_pct: Option<f64>,
}

/// Aggregate of a set of paired-seed traces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    /// Strategy the outperform ratios compare against.
    pub reference: Strategy,
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    /// Rows of one strategy, in iteration order.
    pub fn strategy_rows(&self, strategy: Strategy) -> Vec<&SummaryRow> {
        self.rows.iter().filter(|r| r.strategy == strategy).collect()
    }

    /// The final-iteration row of one strategy.
    pub fn final_row(&self, strategy: Strategy) -> Option<&SummaryRow> {
        self.strategy_rows(strategy).last().copied()
    }
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Aggregates complete traces into per-iteration statistics.
///
/// All traces must come from one experiment shape (same benchmark, lattice,
/// sizing); each (strategy, seed) may appear once. The reference strategy
/// for ratios and improvements is the CDF-variance-reduction sampler when
/// present, otherwise the first strategy encountered.
pub fn summarize(traces: &[RunTrace]) -> Result<Summary> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument(
            "summarize needs at least one trace".into(),
        ));
    }
    if let Some(t) = traces.iter().find(|t| t.error.is_some()) {
        return Err(Error::InvalidArgument(format!(
            "trace {} seed {} is partial (aborted run); summarize complete traces only",
            t.meta.strategy, t.meta.seed
        )));
    }
    let head = &traces[0].meta;
    for t in traces {
        let m = &t.meta;
        let mixed = m.benchmark != head.benchmark
            || m.lattice_resolution != head.lattice_resolution
            || m.n0 != head.n0
            || m.iterations != head.iterations
            || m.batch_size != head.batch_size;
        if mixed {
            return Err(Error::InvalidArgument(format!(
                "trace {} seed {} comes from a different experiment shape",
                m.strategy, m.seed
            )));
        }
    }

    // seed → MAE series, per strategy; BTreeMap keeps seed order canonical.
    let mut by_strategy: BTreeMap<&'static str, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    let mut order: Vec<Strategy> = Vec::new();
    for t in traces {
        let series: Option<Vec<f64>> = t.mae_series().into_iter().collect();
        let Some(series) = series else {
            return Err(Error::InvalidArgument(format!(
                "trace {} seed {} has no MAE series (run without ground truth)",
                t.meta.strategy, t.meta.seed
            )));
        };
        if !order.contains(&t.meta.strategy) {
            order.push(t.meta.strategy);
        }
        let group = by_strategy.entry(t.meta.strategy.name()).or_default();
        if group.insert(t.meta.seed, series).is_some() {
            return Err(Error::InvalidArgument(format!(
                "duplicate trace for {} seed {}",
                t.meta.strategy, t.meta.seed
            )));
        }
    }
    let reference = if order.contains(&Strategy::CdfVarianceReduction) {
        Strategy::CdfVarianceReduction
    } else {
        order[0]
    };
    let ref_group = by_strategy[reference.name()].clone();
    let n_iters = head.iterations + 1; // record 0 plus one per iteration

    let mut rows = Vec::new();
    for iter in 0..n_iters {
        for &strategy in &order {
            let group = &by_strategy[strategy.name()];
            let values: Vec<f64> = group.values().map(|s| s[iter]).collect();
            let (mean_mae, std_mae) = mean_and_std(&values);
            let mut shared = 0usize;
            let mut wins = 0usize;
            for (seed, series) in group {
                if let Some(ref_series) = ref_group.get(seed) {
                    shared += 1;
                    if ref_series[iter] <= series[iter] {
                        wins += 1;
                    }
                }
            }
            let ratio = if shared == 0 {
                f64::NAN
            } else {
                wins as f64 / shared as f64
            };
            rows.push(SummaryRow {
                iteration: iter,
                strategy,
                n_runs: values.len(),
                mean_mae,
                std_mae,
                outperform_or_match_vs_proposed: ratio,
                final_improvement_pct: None,
            });
        }
    }

    // Final-iteration improvement of the reference over each strategy.
    let ref_final = rows
        .iter()
        .find(|r| r.iteration == n_iters - 1 && r.strategy == reference)
        .map(|r| r.mean_mae)
        .expect("reference has a final row");
    for row in &mut rows {
        if row.iteration == n_iters - 1 {
            row.final_improvement_pct = Some(if row.mean_mae == 0.0 {
                0.0
            } else {
                100.0 * (row.mean_mae - ref_final) / row.mean_mae
            });
        }
    }
    Ok(Summary { reference, rows })
}

/// Renders the aggregate table as CSV.
pub fn summary_csv(summary: &Summary) -> String {
    let mut out = String::from(
        "iter,strategy,n_runs,mean_mae,std_mae,outperform_or_match_vs_proposed,final_improvement_pct\n",
    );
    for r in &summary.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iteration,
            r.strategy.name(),
            r.n_runs,
            r.mean_mae,
            r.std_mae,
            r.outperform_or_match_vs_proposed,
            opt_cell(r.final_improvement_pct)
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Loads every `trace_*.json` under a directory, in file-name order.
pub fn load_traces(dir: &Path) -> Result<Vec<RunTrace>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("trace_") && n.ends_with(".json"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no trace_*.json files under {}",
            dir.display()
        )));
    }
    paths
        .iter()
        .map(|p| {
            let text =
                fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
            serde_json::from_str(&text).map_err(|e| Error::Decode {
                path: p.display().to_string(),
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::RefitSchedule;
    use crate::trace::{IterationRecord, TraceMeta};
    use approx::assert_abs_diff_eq;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        let text = format!(
            r#"
[benchmark]
kind = "analytic_field"

[lattice]
resolution = [7, 7]

[run]
strategies = ["cdf_variance_reduction", "random"]
n0 = 4
n_total = 10
seeds = [1, 2]
noise_std = 0.0372

[mle]
restarts = 2
learn_noise = false
refit = {{ every_n = 3 }}

[output]
dir = "{}"
"#,
            dir.display()
        );
        ExperimentConfig::from_toml_str(&text, "test").unwrap()
    }

    #[test]
    fn config_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        cfg.validate().unwrap();
        assert_eq!(cfg.run.batch_size, 1);
        assert_eq!(cfg.run.candidate_count, 1000);
        assert_eq!(cfg.ground_truth.mc_draws, 2000);
        assert_eq!(cfg.iterations(), 6);
        assert_eq!(cfg.mle.refit, RefitSchedule::EveryN(3));
        assert_eq!(cfg.run.seeds.resolve().unwrap(), vec![1, 2]);
    }

    #[test]
    fn partial_mle_and_ground_truth_tables_fill_in_defaults() {
        let text = r#"
[benchmark]
kind = "analytic_field"

[lattice]
resolution = [7, 7]

[run]
strategies = ["random"]
n0 = 4
n_total = 10
seeds = [1]
noise_std = 0.0372

[mle]
restarts = 5

[ground_truth]

[output]
dir = "out"
"#;
        let cfg = ExperimentConfig::from_toml_str(text, "test").unwrap();
        assert_eq!(cfg.mle.restarts, 5);
        assert!(!cfg.mle.learn_noise);
        assert_eq!(cfg.mle.refit, RefitSchedule::EveryRetrain);
        assert_eq!(cfg.ground_truth.mc_draws, 2000);

        let typo = text.replace("restarts = 5", "restart = 5");
        assert!(ExperimentConfig::from_toml_str(&typo, "test").is_err());
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_sections() {
        let bad = r#"
[benchmark]
kind = "analytic_field"
typo_key = 1

[lattice]
resolution = [5, 5]

[run]
strategies = ["random"]
n0 = 2
n_total = 4
seeds = [1]
noise_std = 0.1

[output]
dir = "x"
"#;
        assert!(matches!(
            ExperimentConfig::from_toml_str(bad, "test"),
            Err(Error::Decode { .. })
        ));
        // SDE-only keys on the analytic benchmark are rejected by name.
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.benchmark.spec = Some("G[0,1](x >= 0)".into());
        match cfg.validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "spec"),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn config_invariants_are_enforced_field_by_field() {
        let dir = tempfile::tempdir().unwrap();
        let base = tiny_config(dir.path());

        let mut c = base.clone();
        c.run.n0 = 1;
        assert!(matches!(c.validate(), Err(Error::Config { field: "n0", .. })));

        let mut c = base.clone();
        c.run.n_total = 3;
        assert!(matches!(c.validate(), Err(Error::Config { field: "n_total", .. })));

        let mut c = base.clone();
        c.run.n_total = 50; // lattice has 49 points
        assert!(matches!(c.validate(), Err(Error::Config { field: "n_total", .. })));

        let mut c = base.clone();
        c.run.batch_size = 4; // (10 − 4) not a multiple of 4
        assert!(matches!(c.validate(), Err(Error::Config { field: "n_total", .. })));

        let mut c = base.clone();
        c.run.batch_size = 3;
        c.run.candidate_count = 2;
        assert!(matches!(
            c.validate(),
            Err(Error::Config { field: "candidate_count", .. })
        ));

        let mut c = base.clone();
        c.run.strategies = vec![Strategy::Random, Strategy::Random];
        assert!(matches!(c.validate(), Err(Error::Config { field: "strategies", .. })));

        let mut c = base.clone();
        c.run.noise_std = -0.1;
        assert!(matches!(c.validate(), Err(Error::Config { field: "noise_std", .. })));
    }

    #[test]
    fn seed_specs_parse_ranges_and_lists() {
        assert_eq!(parse_seed_spec("1..5").unwrap(), vec![1, 2, 3, 4, 5]);
        assert_eq!(parse_seed_spec(" 7 .. 7 ").unwrap(), vec![7]);
        assert_eq!(parse_seed_spec("3,1,9").unwrap(), vec![3, 1, 9]);
        assert!(parse_seed_spec("5..2").is_err());
        assert!(parse_seed_spec("a..b").is_err());
        assert!(parse_seed_spec("1;2").is_err());
        assert!(SeedSpec::List(vec![1, 1]).resolve().is_err());
        assert!(SeedSpec::List(vec![]).resolve().is_err());
        assert_eq!(
            SeedSpec::Range("2..4".into()).resolve().unwrap(),
            vec![2, 3, 4]
        );
    }

    #[test]
    fn unknown_benchmark_kind_is_a_field_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.benchmark.kind = "pendulum".into();
        match cfg.validate() {
            Err(Error::Config { field, message }) => {
                assert_eq!(field, "kind");
                assert!(message.contains("pendulum"));
            }
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn ground_truth_cache_roundtrips_and_is_reused() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.benchmark = BenchmarkConfig {
            kind: "linear_sde".into(),
            bounds: None,
            noise_std: None,
            spec: Some("G[0,1](0.75 - abs(x) >= 0)".into()),
            step: Some(0.1),
            horizon: Some(1.0),
            diffusion: None,
            x0: None,
        };
        cfg.lattice.resolution = vec![3, 3];
        cfg.ground_truth.mc_draws = 20;
        let system = cfg.system().unwrap();
        let lattice = cfg.lattice().unwrap();
        let a = load_or_compute_ground_truth(&cfg, &system, &lattice).unwrap();
        let key =
            ground_truth_key(&system, &cfg.lattice.resolution, cfg.ground_truth.mc_draws);
        let path = ground_truth_path(&cfg.output.dir, key);
        assert!(path.exists());
        let bytes_first = fs::read(&path).unwrap();
        // Second call hits the cache and returns the identical field.
        let b = load_or_compute_ground_truth(&cfg, &system, &lattice).unwrap();
        assert_eq!(a, b);
        // Removing the cache recomputes to identical bytes: the Monte-Carlo
        // base seed is the key itself.
        fs::remove_file(&path).unwrap();
        let c = load_or_compute_ground_truth(&cfg, &system, &lattice).unwrap();
        assert_eq!(a, c);
        assert_eq!(bytes_first, fs::read(&path).unwrap());
    }

    #[test]
    fn ground_truth_keys_separate_benchmarks() {
        let analytic = BenchmarkSystem::AnalyticField(AnalyticField::default_benchmark());
        let sde = BenchmarkSystem::LinearSde(LinearSde::default_benchmark().unwrap());
        let k1 = ground_truth_key(&analytic, &[5, 5], 100);
        let k2 = ground_truth_key(&sde, &[5, 5], 100);
        let k3 = ground_truth_key(&analytic, &[7, 5], 100);
        assert_ne!(k1, k2);
        assert_ne!(k1, k3);
        // The analytic field is exact; draw count does not enter its key.
        assert_eq!(k1, ground_truth_key(&analytic, &[5, 5], 999));
        // The simulated field is Monte-Carlo; draw count changes its key.
        assert_ne!(k2, ground_truth_key(&sde, &[5, 5], 999));
    }

    #[test]
    fn experiment_grid_pairs_initial_designs_and_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let outcome = run_experiment(&cfg).unwrap();
        assert!(outcome.failures.is_empty());
        assert_eq!(outcome.traces.len(), 4);
        let summary = outcome.summary.as_ref().expect("summary present");
        assert_eq!(summary.reference, Strategy::CdfVarianceReduction);

        // Paired seeds: identical initial designs across strategies.
        for seed in [1u64, 2] {
            let designs: Vec<Vec<usize>> = outcome
                .traces
                .iter()
                .filter(|t| t.meta.seed == seed)
                .map(|t| t.records[0].selected.clone())
                .collect();
            assert_eq!(designs.len(), 2);
            assert_eq!(designs[0], designs[1], "seed {seed}");
        }

        for strategy in ["cdf_variance_reduction", "random"] {
            for seed in [1, 2] {
                assert!(dir.path().join(format!("trace_{strategy}_{seed}.json")).exists());
                assert!(dir.path().join(format!("trace_{strategy}_{seed}.csv")).exists());
            }
        }
        assert!(dir.path().join("summary.csv").exists());
        assert!(!dir.path().join("failures.json").exists());

        // Trace CSVs have one row per record, headers included.
        let csv = fs::read_to_string(dir.path().join("trace_random_1.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iter,strategy,seed,mae,mae_drop05,mae_drop10,n_train");
        assert_eq!(lines.len(), 1 + 7); // header + record 0 + 6 iterations
        assert!(lines[1].starts_with("0,random,1,"));
        assert!(lines[7].ends_with(",10"));
    }

    #[test]
    fn reruns_reproduce_csv_bytes() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut cfg_a = tiny_config(dir_a.path());
        cfg_a.run.batch_size = 2;
        cfg_a.run.candidate_count = 8;
        let mut cfg_b = cfg_a.clone();
        cfg_b.output.dir = dir_b.path().to_path_buf();
        run_experiment(&cfg_a).unwrap();
        run_experiment(&cfg_b).unwrap();
        let mut names: Vec<String> = fs::read_dir(dir_a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n.ends_with(".csv"))
            .collect();
        names.sort();
        assert!(names.len() >= 5, "expected trace CSVs plus summary: {names:?}");
        for name in names {
            let a = fs::read(dir_a.path().join(&name)).unwrap();
            let b = fs::read(dir_b.path().join(&name)).unwrap();
            assert_eq!(a, b, "{name} differs between reruns");
        }
    }

    #[test]
    fn summaries_recomputed_from_disk_match_in_memory_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let outcome = run_experiment(&cfg).unwrap();
        let reloaded = load_traces(dir.path()).unwrap();
        assert_eq!(reloaded.len(), 4);
        let recomputed = summarize(&reloaded).unwrap();
        assert_eq!(outcome.summary.unwrap(), recomputed);
    }

    fn synthetic_trace(strategy: Strategy, seed: u64, maes: &[f64]) -> RunTrace {
        let records = maes
            .iter()
            .enumerate()
            .map(|(i, &mae)| IterationRecord {
                iteration: i,
                selected: vec![i],
                measurements: vec![0.0],
                signal_variance: 1.0,
                lengthscales: vec![1.0, 1.0],
                noise_std: 0.1,
                mae: Some(mae),
                mae_drop05: Some(mae),
                mae_drop10: Some(mae),
                n_train: 2 + i,
            })
            .collect();
        RunTrace {
            meta: TraceMeta {
                benchmark: "analytic_field".into(),
                strategy,
                seed,
                n0: 2,
                iterations: maes.len() - 1,
                batch_size: 1,
                candidate_count: None,
                noise_std: 0.1,
                learn_noise: false,
                mle_restarts: 1,
                refit: RefitSchedule::EveryRetrain,
                sde_step: None,
                lattice_resolution: vec![5, 5],
            },
            records,
            field: None,
            wall_time_s: 0.0,
            error: None,
        }
    }

    #[test]
    fn single_trace_summary_is_its_own_series() {
        let t = synthetic_trace(Strategy::Random, 1, &[0.4, 0.3, 0.2]);
        let s = summarize(std::slice::from_ref(&t)).unwrap();
        assert_eq!(s.reference, Strategy::Random);
        assert_eq!(s.rows.len(), 3);
        for (row, expect) in s.rows.iter().zip([0.4, 0.3, 0.2]) {
            assert_abs_diff_eq!(row.mean_mae, expect);
            assert_abs_diff_eq!(row.std_mae, 0.0);
            assert_abs_diff_eq!(row.outperform_or_match_vs_proposed, 1.0);
        }
        assert_eq!(s.rows[2].final_improvement_pct, Some(0.0));
        assert_eq!(s.rows[1].final_improvement_pct, None);
    }

    #[test]
    fn identical_series_give_zero_improvement_and_full_ratio() {
        let a = synthetic_trace(Strategy::CdfVarianceReduction, 1, &[0.4, 0.2]);
        let b = synthetic_trace(Strategy::Random, 1, &[0.4, 0.2]);
        let s = summarize(&[a, b]).unwrap();
        let final_random = s.final_row(Strategy::Random).unwrap();
        assert_eq!(final_random.final_improvement_pct, Some(0.0));
        assert_abs_diff_eq!(final_random.outperform_or_match_vs_proposed, 1.0);
    }

    #[test]
    fn improvement_and_ratio_follow_the_paired_seeds() {
        // Reference beats random on seed 1, ties on 2: ratio 1.0; on seed 3
        // random is better: ratio 2/3.
        let traces = vec![
            synthetic_trace(Strategy::CdfVarianceReduction, 1, &[0.5, 0.10]),
            synthetic_trace(Strategy::CdfVarianceReduction, 2, &[0.5, 0.20]),
            synthetic_trace(Strategy::CdfVarianceReduction, 3, &[0.5, 0.30]),
            synthetic_trace(Strategy::Random, 1, &[0.5, 0.20]),
            synthetic_trace(Strategy::Random, 2, &[0.5, 0.20]),
            synthetic_trace(Strategy::Random, 3, &[0.5, 0.25]),
        ];
        let s = summarize(&traces).unwrap();
        let final_random = s.final_row(Strategy::Random).unwrap();
        assert_abs_diff_eq!(final_random.outperform_or_match_vs_proposed, 2.0 / 3.0);
        assert_abs_diff_eq!(final_random.mean_mae, (0.20 + 0.20 + 0.25) / 3.0);
        // Reference mean 0.20 vs random mean 0.21666…: improvement ≈ 7.69%.
        let expect = 100.0 * (final_random.mean_mae - 0.20) / final_random.mean_mae;
        assert_abs_diff_eq!(
            final_random.final_improvement_pct.unwrap(),
            expect,
            epsilon = 1e-12
        );
        let final_ref = s.final_row(Strategy::CdfVarianceReduction).unwrap();
        assert_eq!(final_ref.final_improvement_pct, Some(0.0));
        assert_abs_diff_eq!(final_ref.std_mae, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn summarize_rejects_mixed_and_duplicate_traces() {
        let a = synthetic_trace(Strategy::Random, 1, &[0.4, 0.2]);
        let mut b = synthetic_trace(Strategy::Random, 2, &[0.4, 0.2, 0.1]);
        b.meta.iterations = 2;
        assert!(summarize(&[a.clone(), b]).is_err());
        let dup = synthetic_trace(Strategy::Random, 1, &[0.4, 0.3]);
        assert!(summarize(&[a.clone(), dup]).is_err());
        let mut partial = synthetic_trace(Strategy::Random, 2, &[0.4, 0.2]);
        partial.error = Some("iteration 1: boom".into());
        assert!(summarize(&[a, partial]).is_err());
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn trace_csv_renders_exact_bytes() {
        let t = synthetic_trace(Strategy::PdfMean, 9, &[0.25, 0.125]);
        assert_eq!(
            trace_csv(&t),
            "iter,strategy,seed,mae,mae_drop05,mae_drop10,n_train\n\
             0,pdf_mean,9,0.25,0.25,0.25,2\n\
             1,pdf_mean,9,0.125,0.125,0.125,3\n"
        );
    }

    #[test]
    fn summary_csv_marks_only_final_rows_with_improvement() {
        // Dyadic MAE values so the improvement percentage is exact:
        // 100·(0.25 − 0.125)/0.25 = 50.
        let a = synthetic_trace(Strategy::CdfVarianceReduction, 1, &[0.5, 0.125]);
        let b = synthetic_trace(Strategy::Random, 1, &[0.5, 0.25]);
        let s = summarize(&[a, b]).unwrap();
        let csv = summary_csv(&s);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "iter,strategy,n_runs,mean_mae,std_mae,outperform_or_match_vs_proposed,final_improvement_pct"
        );
        assert_eq!(lines.len(), 5);
        assert!(lines[1].ends_with(",1,")); // iteration 0: no improvement cell
        assert_eq!(lines[4], "1,random,1,0.25,0,1,50");
    }
}
