//! The satisfaction-probability calculus.
//!
//! A parameter point satisfies the requirement when its robustness measurement
//! is positive, so with Gaussian measurement noise ε_y the true satisfaction
//! probability at latent mean ȳ(θ) is a normal CDF:
//!
//! ```text
//! p_sat(θ)  = ½ + ½·erf( ȳ(θ) / √(2 ε_y²) )
//! ```
//!
//! Replacing ȳ with the GP posterior N(μ, Σ) and marginalizing gives the
//! predicted satisfaction probability, and a 1st-order Taylor expansion of the
//! CDF gives an approximate variance of that prediction — the toolkit's
//! confidence metric:
//!
//! ```text
//! p̂_sat(θ) = ½ + ½·erf( μ / √(2(Σ + ε_y²)) )
//! V(θ|L)   = (1/(2π ε_y²)) · e^(−μ²/ε_y²) · Σ
//! ```
//!
//! Adding one hypothetical sample at θ with the expected measurement μ(θ)
//! shrinks the posterior variance (Woodbury identity; the mean is unchanged):
//!
//! ```text
//! Σ⁺ = Σ·(1 − Σ/(Σ + ε_y²))
//! ```
//!
//! so the local drop in CDF variance — the acquisition score used by the
//! closed-loop drivers — has the closed form
//!
//! ```text
//! Ṽ(θ|L) = V(θ|L) · Σ/(Σ + ε_y²) = V(θ|L) − V(θ|L with Σ⁺).
//! ```
//!
//! A Chebyshev-style tail bound `min(1, V/a²)` is exposed for diagnostics
//! only: V is itself an approximation, so the bound must not be taken as a
//! sound certificate, and nothing in the acquisition path consumes it.
//!
//! `erf` comes from a libm implementation accurate to double precision
//! (well inside the documented 1e−12 requirement); tests pin it against a
//! frozen high-precision table and an independent rational approximation.

use serde::{Deserialize, Serialize};

use crate::gp::{GpModel, PredictiveDist};
use crate::kernel::ParamVector;
use crate::{Error, Result};

/// Predicted satisfaction probability and its approximate CDF variance at one
/// lattice point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatisfactionEstimate {
    /// p̂_sat ∈ [0, 1].
    pub p_sat_hat: f64,
    /// V(θ|L) ≥ 0, bounded by σ_f²/(2π ε_y²).
    pub cdf_variance: f64,
}

/// True satisfaction probabilities over a lattice, either exact (analytic
/// benchmarks) or Monte-Carlo estimates (simulated systems).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthField {
    pub lattice: Vec<ParamVector>,
    pub p_sat_true: Vec<f64>,
}

impl GroundTruthField {
    pub fn validate(&self) -> Result<()> {
        if self.lattice.len() != self.p_sat_true.len() {
            return Err(Error::DimensionMismatch {
                context: "ground-truth lattice vs probabilities",
                expected: self.lattice.len(),
                got: self.p_sat_true.len(),
            });
        }
        if let Some(i) = self
            .p_sat_true
            .iter()
            .position(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::InvalidArgument(format!(
                "ground-truth probability {} at index {i} outside [0,1]",
                self.p_sat_true[i]
            )));
        }
        Ok(())
    }
}

/// True satisfaction probability at a point with known latent mean ȳ:
/// `½ + ½·erf(ȳ/√(2ε_y²))`.
pub fn true_p_sat(mean_fn_value: f64, noise_std: f64) -> f64 {
    0.5 + 0.5 * libm::erf(mean_fn_value / (noise_std * std::f64::consts::SQRT_2))
}

/// Predicted satisfaction probability under the GP posterior:
/// `½ + ½·erf(μ/√(2(Σ+ε_y²)))`.
pub fn predicted_p_sat(dist: PredictiveDist, noise_std: f64) -> f64 {
    let denom = (2.0 * (dist.variance + noise_std * noise_std)).sqrt();
    0.5 + 0.5 * libm::erf(dist.mean / denom)
}

/// 1st-order approximation of the variance of the predicted satisfaction
/// probability: `(1/(2π ε_y²))·e^(−μ²/ε_y²)·Σ`.
pub fn cdf_variance(dist: PredictiveDist, noise_std: f64) -> f64 {
    let noise_var = noise_std * noise_std;
    let scale = 1.0 / (2.0 * std::f64::consts::PI * noise_var);
    scale * (-dist.mean * dist.mean / noise_var).exp() * dist.variance
}

/// Posterior variance after one hypothetical sample at the point, via the
/// Woodbury identity: `Σ⁺ = Σ·(1 − Σ/(Σ + ε_y²))`. The posterior mean is
/// unchanged (the hypothetical measurement is the current mean itself).
pub fn posterior_variance_after_sample(dist: PredictiveDist, noise_std: f64) -> f64 {
    let noise_var = noise_std * noise_std;
    dist.variance * (1.0 - dist.variance / (dist.variance + noise_var))
}

/// Local change in CDF variance from one hypothetical sample:
/// `Ṽ = (1/(2π ε_y²))·e^(−μ²/ε_y²)·Σ·(Σ/(Σ+ε_y²))`, which algebraically
/// equals `cdf_variance(Σ) − cdf_variance(Σ⁺)`.
pub fn variance_reduction(dist: PredictiveDist, noise_std: f64) -> f64 {
    let noise_var = noise_std * noise_std;
    cdf_variance(dist, noise_std) * dist.variance / (dist.variance + noise_var)
}

/// Chebyshev-style bound on the probability that the prediction is off by
/// more than `a`: `min(1, V/a²)`. Diagnostics only — the variance it consumes
/// is itself a 1st-order approximation, so this is not a sound certificate.
pub fn chebyshev_bound(cdf_var: f64, a: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "chebyshev bound requires a > 0, got {a}"
        )));
    }
    Ok((cdf_var / (a * a)).min(1.0))
}

/// Predicted satisfaction probability and CDF variance at every lattice
/// point, using the model's own noise estimate.
pub fn field_evaluate(model: &GpModel, lattice: &[ParamVector]) -> Result<Vec<SatisfactionEstimate>> {
    let noise_std = model.lik_h().noise_std;
    lattice
        .iter()
        .map(|q| {
            let dist = model.predict(q)?;
            Ok(estimate_from_dist(dist, noise_std))
        })
        .collect()
}

/// Compose one posterior into a satisfaction estimate (shared by
/// [`field_evaluate`] and the fast lattice sweep in the drivers).
pub fn estimate_from_dist(dist: PredictiveDist, noise_std: f64) -> SatisfactionEstimate {
    SatisfactionEstimate {
        p_sat_hat: predicted_p_sat(dist, noise_std),
        cdf_variance: cdf_variance(dist, noise_std),
    }
}
