//! Squared-exponential covariance with automatic relevance determination.
//!
//! The kernel between two parameter points `a, b ∈ R^p` is
//!
//! ```text
//! κ(a, b) = σ_f² · exp( −½ · Σ_d ((a_d − b_d) / ℓ_d)² )
//! ```
//!
//! with one lengthscale `ℓ_d` per dimension (the "automatic relevance
//! determination" part: a large `ℓ_d` makes dimension `d` irrelevant).
//! Hyperparameters are optimized in log-space elsewhere, so gradients here are
//! taken with respect to `log σ_f²` and `log ℓ_d`:
//!
//! ```text
//! ∂κ/∂log σ_f² = κ,      ∂κ/∂log ℓ_d = κ · ((a_d − b_d)/ℓ_d)²
//! ```
//!
//! Kernel matrices are assembled densely in O(N²p); the toolkit operates on
//! training sets of at most a few thousand points, where dense assembly and
//! factorization are the fastest option anyway.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A point θ in the parameter (uncertainty) space Θ ⊂ R^p.
pub type ParamVector = Vec<f64>;

/// Hyperparameters of the SE-ARD kernel.
///
/// `signal_variance` is σ_f² in units of the measured signal squared;
/// `lengthscales` holds one positive ℓ_d per parameter dimension, in the units
/// of that dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
}

impl KernelHyperparams {
    /// Isotropic constructor: the same lengthscale in every dimension.
    pub fn isotropic(signal_variance: f64, lengthscale: f64, dim: usize) -> Self {
        KernelHyperparams {
            signal_variance,
            lengthscales: vec![lengthscale; dim],
        }
    }

    /// Number of parameter-space dimensions the kernel covers.
    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Check positivity and finiteness of every hyperparameter.
    pub fn validate(&self) -> Result<()> {
        if !(self.signal_variance > 0.0 && self.signal_variance.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "signal_variance must be positive and finite, got {}",
                self.signal_variance
            )));
        }
        if self.lengthscales.is_empty() {
            return Err(Error::InvalidArgument(
                "lengthscales must be non-empty".into(),
            ));
        }
        for (d, &l) in self.lengthscales.iter().enumerate() {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "lengthscale {d} must be positive and finite, got {l}"
                )));
            }
        }
        Ok(())
    }
}

/// Gradient of `kernel_eval` with respect to the log-hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrad {
    /// ∂κ/∂log σ_f² (equals κ itself).
    pub d_log_signal_variance: f64,
    /// ∂κ/∂log ℓ_d for every dimension d.
    pub d_log_lengthscales: Vec<f64>,
}

fn check_dims(a: &[f64], b: &[f64], h: &KernelHyperparams) -> Result<()> {
    if a.len() != h.dim() {
        return Err(Error::DimensionMismatch {
            context: "kernel input a vs lengthscales",
            expected: h.dim(),
            got: a.len(),
        });
    }
    if b.len() != h.dim() {
        return Err(Error::DimensionMismatch {
            context: "kernel input b vs lengthscales",
            expected: h.dim(),
            got: b.len(),
        });
    }
    Ok(())
}

/// ½ Σ_d ((a_d − b_d)/ℓ_d)² — the scaled squared distance in the exponent.
#[inline]
fn half_scaled_sq_dist(a: &[f64], b: &[f64], lengthscales: &[f64]) -> f64 {
    let mut s = 0.0;
    for d in 0..lengthscales.len() {
        let z = (a[d] - b[d]) / lengthscales[d];
        s += z * z;
    }
    0.5 * s
}

/// Kernel evaluation without dimension checks; callers validate once per block.
#[inline]
pub(crate) fn eval_unchecked(a: &[f64], b: &[f64], h: &KernelHyperparams) -> f64 {
    debug_assert_eq!(a.len(), h.dim());
    debug_assert_eq!(b.len(), h.dim());
    h.signal_variance * (-half_scaled_sq_dist(a, b, &h.lengthscales)).exp()
}

/// Evaluate κ(a, b).
///
/// Symmetric in its arguments and bounded by `0 < κ(a,b) ≤ σ_f²`, with
/// equality exactly when `a == b`.
pub fn kernel_eval(a: &[f64], b: &[f64], h: &KernelHyperparams) -> Result<f64> {
    check_dims(a, b, h)?;
    Ok(eval_unchecked(a, b, h))
}

/// Assemble the N×N kernel matrix `K_ij = κ(points_i, points_j)`.
///
/// The result is symmetric with diagonal σ_f² and positive semi-definite (up
/// to round-off; factorization callers add jitter when needed).
pub fn kernel_matrix(points: &[ParamVector], h: &KernelHyperparams) -> Result<DMatrix<f64>> {
    h.validate()?;
    for p in points {
        check_dims(p, p, h)?;
    }
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = h.signal_variance;
        for j in 0..i {
            let v = eval_unchecked(&points[i], &points[j], h);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// The N-vector of kernel values between one query point and a training set:
/// element `i` is `κ(query, points_i)`.
pub fn cross_vector(
    query: &[f64],
    points: &[ParamVector],
    h: &KernelHyperparams,
) -> Result<DVector<f64>> {
    for p in points {
        check_dims(query, p, h)?;
    }
    if points.is_empty() {
        // Query dimension is still checked against the hyperparameters.
        check_dims(query, query, h)?;
    }
    Ok(DVector::from_iterator(
        points.len(),
        points.iter().map(|p| eval_unchecked(query, p, h)),
    ))
}

/// Analytic gradient of κ(a, b) with respect to `log σ_f²` and each `log ℓ_d`.
pub fn kernel_grad(a: &[f64], b: &[f64], h: &KernelHyperparams) -> Result<KernelGrad> {
    check_dims(a, b, h)?;
    let k = eval_unchecked(a, b, h);
    let d_log_lengthscales = (0..h.dim())
        .map(|d| {
            let z = (a[d] - b[d]) / h.lengthscales[d];
            k * z * z
        })
        .collect();
    Ok(KernelGrad {
        d_log_signal_variance: k,
        d_log_lengthscales,
    })
}
