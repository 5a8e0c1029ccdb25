//! Benchmark stochastic systems with recoverable ground truth.
//!
//! Two systems cover the two ways a verification target can come about:
//!
//! * **analytic_field** — a closed-form latent surface observed through
//!   Gaussian noise,
//!
//!   ```text
//!   y(θ) = ȳ(θ) + ε_y·η,    ȳ(θ) = sin(θ₁)·cos(θ₂) + 0.03·θ₁,    η ~ N(0,1)
//!   ```
//!
//!   on θ ∈ [−10,10]². The 0.03·θ₁ tilt keeps the zero level set of ȳ (the
//!   satisfaction boundary) curved and asymmetric. Because ȳ is known, the
//!   true satisfaction probability is exact: p_sat(θ) = Φ(ȳ(θ)/ε_y).
//!
//! * **linear_sde** — a damped oscillator with additive process noise,
//!
//!   ```text
//!   dx = v dt
//!   dv = (−k·x − c·v) dt + g dW        θ = (k, c)
//!   ```
//!
//!   integrated by Euler–Maruyama (both states receive N(0,1)·g·√Δt
//!   increments per step). The measurement is the robustness of a temporal
//!   specification over the sampled trajectory, exercising the full
//!   simulate→ρ path; ground truth comes from Monte-Carlo repetition.
//!
//! Every simulation is a pure function of (system, θ, seed). Seeds for the
//! individual samples inside a run or a ground-truth sweep derive from
//! (domain, base seed, lattice index, draw counter) through a splitmix-style
//! mix, so concurrent execution and strategy pairing never change any
//! measured value: the same location in the same run yields the same
//! measurement no matter which strategy asked for it, or when.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gp::splitmix64;
use crate::kernel::ParamVector;
use crate::sampling::Lattice;
use crate::stl::{self, StlFormula, Trajectory};
use crate::verify::{self, GroundTruthField};
use crate::{Error, Result};

/// Largest lattice the builder will materialize.
pub const MAX_LATTICE_POINTS: usize = 1_000_000;

/// Seed-derivation domain for measurements consumed by a run.
pub const SEED_DOMAIN_RUN: u64 = 0x52554e;
/// Seed-derivation domain for ground-truth Monte-Carlo draws.
pub const SEED_DOMAIN_GROUND_TRUTH: u64 = 0x4754;

/// One simulated measurement: the scalar outcome y at parameter θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSample {
    pub theta: ParamVector,
    /// Robustness-scaled outcome; positive means the requirement held.
    pub y: f64,
    /// The exact seed that produced this sample (replayable).
    pub seed: u64,
}

/// Closed-form noisy surface on a rectangle; ground truth is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticField {
    pub bounds: Vec<[f64; 2]>,
    /// Observation noise ε_y. Zero makes measurements exactly ȳ(θ).
    pub noise_std: f64,
}

impl AnalyticField {
    /// The default benchmark surface on [−10,10]² with the reference noise
    /// level 0.0372.
    pub fn default_benchmark() -> Self {
        AnalyticField {
            bounds: vec![[-10.0, 10.0], [-10.0, 10.0]],
            noise_std: 0.0372,
        }
    }

    /// Noise-free surface value ȳ(θ) = sin(θ₁)·cos(θ₂) + 0.03·θ₁.
    pub fn latent_mean(&self, theta: &[f64]) -> f64 {
        theta[0].sin() * theta[1].cos() + 0.03 * theta[0]
    }
}

/// Damped oscillator driven by additive white noise, measured through a
/// temporal specification.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSde {
    /// Bounds for θ = (stiffness k, damping c); both must stay positive so
    /// the drift is stable.
    pub bounds: Vec<[f64; 2]>,
    pub spec: StlFormula,
    /// Spec source text, echoed into traces.
    pub spec_text: String,
    /// Euler–Maruyama step Δt in seconds.
    pub step: f64,
    /// Integration horizon in seconds (the trajectory spans [0, horizon]).
    pub horizon: f64,
    /// Noise gain g applied to both state increments.
    pub diffusion: f64,
    /// Initial state [x(0), v(0)].
    pub x0: [f64; 2],
}

impl LinearSde {
    /// Default benchmark: zero initial displacement, unit initial velocity,
    /// and a displacement envelope that lightly-damped parameters overshoot
    /// (p_sat sweeps from ≈0 to ≈1 across the (k, c) rectangle).
    pub fn default_benchmark() -> Result<Self> {
        let spec_text = "G[0,8](0.75 - abs(x) >= 0)".to_string();
        Ok(LinearSde {
            bounds: vec![[0.5, 4.0], [0.1, 2.0]],
            spec: stl::parse(&spec_text)?,
            spec_text,
            step: 0.05,
            horizon: 8.0,
            diffusion: 0.25,
            x0: [0.0, 1.0],
        })
    }

    fn n_steps(&self) -> usize {
        (self.horizon / self.step).round() as usize
    }
}

/// A benchmark system the closed loop can drive.
#[derive(Debug, Clone, PartialEq)]
pub enum BenchmarkSystem {
    AnalyticField(AnalyticField),
    LinearSde(LinearSde),
}

impl BenchmarkSystem {
    pub fn bounds(&self) -> &[[f64; 2]] {
        match self {
            BenchmarkSystem::AnalyticField(s) => &s.bounds,
            BenchmarkSystem::LinearSde(s) => &s.bounds,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds().len()
    }

    /// Short identifier echoed into traces and file names.
    pub fn kind(&self) -> &'static str {
        match self {
            BenchmarkSystem::AnalyticField(_) => "analytic_field",
            BenchmarkSystem::LinearSde(_) => "linear_sde",
        }
    }

    /// The Euler–Maruyama step, for systems that integrate one.
    pub fn step(&self) -> Option<f64> {
        match self {
            BenchmarkSystem::AnalyticField(_) => None,
            BenchmarkSystem::LinearSde(s) => Some(s.step),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (d, b) in self.bounds().iter().enumerate() {
            if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
                return Err(Error::Config {
                    field: "bounds".into(),
                    message: format!("dimension {d} needs finite lo < hi, got [{}, {}]", b[0], b[1]),
                });
            }
        }
        match self {
            BenchmarkSystem::AnalyticField(s) => {
                if s.bounds.len() != 2 {
                    return Err(Error::Config {
                        field: "bounds".into(),
                        message: "the analytic surface is defined over two parameters".into(),
                    });
                }
                if !(s.noise_std.is_finite() && s.noise_std >= 0.0) {
                    return Err(Error::Config {
                        field: "noise_std".into(),
                        message: format!("need a finite ε_y ≥ 0, got {}", s.noise_std),
                    });
                }
            }
            BenchmarkSystem::LinearSde(s) => {
                if s.bounds.len() != 2 {
                    return Err(Error::Config {
                        field: "bounds".into(),
                        message: "the oscillator takes θ = (stiffness, damping)".into(),
                    });
                }
                if s.bounds.iter().any(|b| b[0] <= 0.0) {
                    return Err(Error::Config {
                        field: "bounds".into(),
                        message: "stiffness and damping must stay positive for stability".into(),
                    });
                }
                if !(s.step > 0.0 && s.step.is_finite()) {
                    return Err(Error::Config {
                        field: "step".into(),
                        message: format!("need a positive step, got {}", s.step),
                    });
                }
                if !(s.horizon > 0.0 && s.horizon.is_finite()) {
                    return Err(Error::Config {
                        field: "horizon".into(),
                        message: format!("need a positive horizon, got {}", s.horizon),
                    });
                }
                if !(s.diffusion.is_finite() && s.diffusion >= 0.0) {
                    return Err(Error::Config {
                        field: "diffusion".into(),
                        message: format!("need a finite diffusion ≥ 0, got {}", s.diffusion),
                    });
                }
                for name in s.spec.channels() {
                    if !matches!(name.as_str(), "x" | "v" | "x0") {
                        return Err(Error::UnknownChannel(name));
                    }
                }
            }
        }
        Ok(())
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        let bounds = self.bounds();
        if theta.len() != bounds.len() {
            return Err(Error::DimensionMismatch {
                context: "parameter dimension vs system bounds",
                expected: bounds.len(),
                got: theta.len(),
            });
        }
        for (d, (&x, b)) in theta.iter().zip(bounds).enumerate() {
            let tol = 1e-12 * (b[1] - b[0]).abs();
            if !x.is_finite() || x < b[0] - tol || x > b[1] + tol {
                return Err(Error::OutOfBounds {
                    index: d,
                    value: x,
                    lo: b[0],
                    hi: b[1],
                });
            }
        }
        Ok(())
    }
}

/// Deterministic per-sample seed: mixes a domain tag, the base (run or
/// ground-truth) seed, the lattice index, and a draw counter through
/// repeated splitmix64 steps. Every argument change flips the output
/// thoroughly, so parallel workers can derive their own seeds without
/// coordination and without correlated streams.
pub fn derive_seed(domain: u64, base_seed: u64, lattice_idx: u64, draw: u64) -> u64 {
    let mut h = splitmix64(domain ^ 0xa076_1d64_78bd_642f);
    h = splitmix64(h ^ base_seed);
    h = splitmix64(h ^ lattice_idx);
    h = splitmix64(h ^ draw);
    h
}

/// Runs one stochastic simulation at θ and measures the scalar outcome.
/// A pure function of (system, θ, seed).
pub fn simulate_measure(
    system: &BenchmarkSystem,
    theta: &[f64],
    seed: u64,
) -> Result<MeasurementSample> {
    system.check_theta(theta)?;
    let y = match system {
        BenchmarkSystem::AnalyticField(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let eta: f64 = rng.sample(StandardNormal);
            s.latent_mean(theta) + s.noise_std * eta
        }
        BenchmarkSystem::LinearSde(s) => {
            let traj = integrate_sde(s, theta, seed)?;
            stl::robustness(&s.spec, &traj)?
        }
    };
    if !y.is_finite() {
        return Err(Error::SimulationDiverged(format!(
            "non-finite measurement at θ = {theta:?}, seed {seed}"
        )));
    }
    Ok(MeasurementSample {
        theta: theta.to_vec(),
        y,
        seed,
    })
}

/// Euler–Maruyama integration of the oscillator, producing channels `x`,
/// `v`, and the held initial displacement `x0`.
fn integrate_sde(s: &LinearSde, theta: &[f64], seed: u64) -> Result<Trajectory> {
    let (k, c) = (theta[0], theta[1]);
    let dt = s.step;
    let sqrt_dt = dt.sqrt();
    let n = s.n_steps();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut times = Vec::with_capacity(n + 1);
    let mut xs = Vec::with_capacity(n + 1);
    let mut vs = Vec::with_capacity(n + 1);
    let (mut x, mut v) = (s.x0[0], s.x0[1]);
    times.push(0.0);
    xs.push(x);
    vs.push(v);
    for i in 1..=n {
        let eta_x: f64 = rng.sample(StandardNormal);
        let eta_v: f64 = rng.sample(StandardNormal);
        let nx = x + dt * v + s.diffusion * sqrt_dt * eta_x;
        let nv = v + dt * (-k * x - c * v) + s.diffusion * sqrt_dt * eta_v;
        x = nx;
        v = nv;
        if !(x.is_finite() && v.is_finite()) {
            return Err(Error::SimulationDiverged(format!(
                "state diverged at t = {:.3} for θ = {theta:?}",
                i as f64 * dt
            )));
        }
        times.push(i as f64 * dt);
        xs.push(x);
        vs.push(v);
    }
    let x0_channel = vec![s.x0[0]; n + 1];
    Trajectory::new(
        times,
        vec![
            ("x".to_string(), xs),
            ("v".to_string(), vs),
            ("x0".to_string(), x0_channel),
        ],
    )
}

/// True satisfaction probabilities over a lattice: exact for the analytic
/// surface, a Monte-Carlo fraction-of-satisfying-runs estimate for the SDE.
///
/// `mc_draws` is ignored for the analytic surface. The RNG contributes one
/// base seed; individual draw seeds derive from it per (point, draw), so the
/// result is independent of evaluation order and thread count.
pub fn ground_truth<R: RngCore + ?Sized>(
    system: &BenchmarkSystem,
    lattice: &Lattice,
    mc_draws: usize,
    rng: &mut R,
) -> Result<GroundTruthField> {
    system.validate()?;
    match system {
        BenchmarkSystem::AnalyticField(s) => {
            let p_sat_true = lattice
                .points()
                .iter()
                .map(|theta| exact_p_sat(s.latent_mean(theta), s.noise_std))
                .collect();
            Ok(GroundTruthField {
                lattice: lattice.points().to_vec(),
                p_sat_true,
            })
        }
        BenchmarkSystem::LinearSde(_) => {
            if mc_draws == 0 {
                return Err(Error::InvalidArgument(
                    "Monte-Carlo ground truth needs mc_draws ≥ 1".into(),
                ));
            }
            mc_ground_truth(system, lattice, mc_draws, rng.next_u64())
        }
    }
}

/// Satisfaction probability of a Gaussian measurement with the given mean;
/// degenerates to the indicator of ȳ > 0 when the noise vanishes.
fn exact_p_sat(latent_mean: f64, noise_std: f64) -> f64 {
    if noise_std == 0.0 {
        return if latent_mean > 0.0 {
            1.0
        } else if latent_mean < 0.0 {
            0.0
        } else {
            0.5
        };
    }
    verify::true_p_sat(latent_mean, noise_std)
}

/// Monte-Carlo estimator of the ground-truth field for any system: the
/// fraction of `mc_draws` simulations with y > 0 at each lattice point.
/// Exposed so the analytic surface's closed form can be cross-checked by
/// simulation.
pub fn mc_ground_truth(
    system: &BenchmarkSystem,
    lattice: &Lattice,
    mc_draws: usize,
    base_seed: u64,
) -> Result<GroundTruthField> {
    system.validate()?;
    if mc_draws == 0 {
        return Err(Error::InvalidArgument(
            "Monte-Carlo ground truth needs mc_draws ≥ 1".into(),
        ));
    }
    let p_sat_true = lattice
        .points()
        .par_iter()
        .enumerate()
        .map(|(i, theta)| {
            let mut satisfied = 0usize;
            for draw in 0..mc_draws {
                let seed =
                    derive_seed(SEED_DOMAIN_GROUND_TRUTH, base_seed, i as u64, draw as u64);
                let sample = simulate_measure(system, theta, seed)?;
                if sample.y > 0.0 {
                    satisfied += 1;
                }
            }
            Ok(satisfied as f64 / mc_draws as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(GroundTruthField {
        lattice: lattice.points().to_vec(),
        p_sat_true,
    })
}

/// Builds a regular axis-aligned grid: `resolution[d]` evenly spaced values
/// per dimension, endpoints included, row-major with the last dimension
/// varying fastest.
pub fn build_lattice(bounds: &[[f64; 2]], resolution: &[usize]) -> Result<Lattice> {
    if bounds.is_empty() || bounds.len() != resolution.len() {
        return Err(Error::DimensionMismatch {
            context: "lattice bounds vs resolution",
            expected: bounds.len().max(1),
            got: resolution.len(),
        });
    }
    for (d, (&r, b)) in resolution.iter().zip(bounds).enumerate() {
        if r < 2 {
            return Err(Error::Config {
                field: "resolution".into(),
                message: format!("dimension {d} needs resolution ≥ 2, got {r}"),
            });
        }
        if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
            return Err(Error::Config {
                field: "bounds".into(),
                message: format!("dimension {d} needs finite lo < hi, got [{}, {}]", b[0], b[1]),
            });
        }
    }
    let mut count: usize = 1;
    for &r in resolution {
        count = count.checked_mul(r).unwrap_or(usize::MAX);
        if count > MAX_LATTICE_POINTS {
            return Err(Error::Config {
                field: "resolution".into(),
                message: format!(
                    "lattice would exceed the {MAX_LATTICE_POINTS}-point cap"
                ),
            });
        }
    }
    let dim = bounds.len();
    let mut points = Vec::with_capacity(count);
    for idx in 0..count {
        let mut p = vec![0.0; dim];
        let mut rem = idx;
        // Last dimension varies fastest.
        for d in (0..dim).rev() {
            let r = resolution[d];
            let i = rem % r;
            rem /= r;
            let t = i as f64 / (r - 1) as f64;
            // Affine blend hits both endpoints exactly.
            p[d] = bounds[d][0] * (1.0 - t) + bounds[d][1] * t;
        }
        points.push(p);
    }
    Lattice::new(points, bounds.to_vec(), resolution.to_vec())
}
