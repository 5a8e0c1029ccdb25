//! Gaussian-process regression with a Gaussian measurement likelihood.
//!
//! Training solves the regularized kernel system once per fit:
//!
//! ```text
//! K̄ = K + ε_y²·I = L·Lᵀ          (Cholesky, lower L)
//! α  = K̄⁻¹·y
//! ```
//!
//! after which the posterior at a query θ* is
//!
//! ```text
//! μ(θ*) = K_*ᵀ·α                  (O(N) per query)
//! Σ(θ*) = κ(θ*,θ*) − ‖L⁻¹K_*‖²    (O(N²) per query)
//! ```
//!
//! Hyperparameters are estimated by maximizing the log marginal likelihood
//!
//! ```text
//! log p(y) = −½·yᵀα − Σ_i log L_ii − (N/2)·log 2π
//! ```
//!
//! with analytic gradients `½·tr((ααᵀ − K̄⁻¹)·∂K̄/∂η)` over the
//! log-hyperparameters η, using multi-start gradient ascent with backtracking
//! line search. Restart initializations come from a fixed counter-based
//! sequence, so the whole estimate is a pure function of its inputs.
//!
//! Two additions keep closed-loop experiments fast without changing any
//! result: [`GpModel::extend`] grows an existing factorization by a block of
//! rows in O(N²·M) instead of refitting in O(N³), and [`LatticePredictor`]
//! maintains per-lattice-point solve prefixes so a posterior sweep over tens
//! of thousands of query points costs a couple of matrix multiplications per
//! iteration instead of a fresh triangular solve against every point.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::kernel::{self, KernelHyperparams, ParamVector};
use crate::{Error, Result};

/// ln(2π), frozen from an arbitrary-precision evaluation.
const LN_2PI: f64 = 1.83787706640934548356065947281;

/// Relative diagonal jitter applied when `K + ε_y²I` alone fails Cholesky.
const JITTER_REL: f64 = 1e-10;

/// A training dataset: parameter settings paired with scalar robustness
/// measurements.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub params: Vec<ParamVector>,
    pub measurements: Vec<f64>,
}

impl TrainingSet {
    pub fn new(params: Vec<ParamVector>, measurements: Vec<f64>) -> Self {
        TrainingSet {
            params,
            measurements,
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Parameter-space dimension (0 for an empty set).
    pub fn dim(&self) -> usize {
        self.params.first().map_or(0, |p| p.len())
    }

    pub fn push(&mut self, theta: ParamVector, y: f64) {
        self.params.push(theta);
        self.measurements.push(y);
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.len() != self.measurements.len() {
            return Err(Error::DimensionMismatch {
                context: "training params vs measurements",
                expected: self.params.len(),
                got: self.measurements.len(),
            });
        }
        if self.params.is_empty() {
            return Err(Error::InvalidArgument("training set must be non-empty".into()));
        }
        let dim = self.params[0].len();
        for (i, p) in self.params.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "training point dimension",
                    expected: dim,
                    got: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "training point {i} has a non-finite coordinate"
                )));
            }
        }
        if let Some(i) = self.measurements.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "measurement {i} is not finite"
            )));
        }
        Ok(())
    }
}

/// Hyperparameters of the Gaussian measurement likelihood.
///
/// `noise_std` is ε_y in robustness units. Zero is permitted so a noise-free
/// GP can interpolate its training data exactly; maximum-likelihood noise
/// estimation (`learn_noise = true`) requires a strictly positive starting
/// value because the search runs in log-space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodHyperparams {
    pub noise_std: f64,
    pub learn_noise: bool,
}

impl LikelihoodHyperparams {
    pub fn fixed(noise_std: f64) -> Self {
        LikelihoodHyperparams {
            noise_std,
            learn_noise: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_std must be nonnegative and finite, got {}",
                self.noise_std
            )));
        }
        if self.learn_noise && self.noise_std == 0.0 {
            return Err(Error::InvalidArgument(
                "learn_noise requires a positive noise_std starting value".into(),
            ));
        }
        Ok(())
    }
}

/// Gaussian posterior at one query point: mean μ(θ*) in robustness units and
/// variance Σ(θ*) in robustness² units, with `0 ≤ variance ≤ σ_f²` up to
/// round-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDist {
    pub mean: f64,
    pub variance: f64,
}

/// Gradient of the log marginal likelihood over the log-hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LmlGrad {
    pub d_log_signal_variance: f64,
    pub d_log_lengthscales: Vec<f64>,
    /// Present only when the model learns its noise.
    pub d_log_noise_std: Option<f64>,
}

/// A fitted GP: hyperparameters plus the cached Cholesky factorization.
///
/// Models are immutable once fitted; `fit`, `fit_mle`, and `extend` all
/// produce new models, so concurrent prediction against a shared model is
/// safe.
#[derive(Debug)]
pub struct GpModel {
    train: TrainingSet,
    kernel_h: KernelHyperparams,
    lik_h: LikelihoodHyperparams,
    /// Lower-triangular factor L with L·Lᵀ = K + (ε_y² + jitter)·I.
    chol: DMatrix<f64>,
    /// α = (K + ε_y²I)⁻¹·y.
    alpha: DVector<f64>,
    /// Diagonal jitter actually applied (0 when the noise term sufficed).
    jitter: f64,
    /// Number of negative predicted variances clamped to zero (diagnostic).
    clamped: AtomicU64,
}

impl Clone for GpModel {
    fn clone(&self) -> Self {
        GpModel {
            train: self.train.clone(),
            kernel_h: self.kernel_h.clone(),
            lik_h: self.lik_h,
            chol: self.chol.clone(),
            alpha: self.alpha.clone(),
            jitter: self.jitter,
            clamped: AtomicU64::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

/// Factorize K + ε_y²I, retrying once with the documented jitter.
fn factorize(
    k: &DMatrix<f64>,
    kernel_h: &KernelHyperparams,
    noise_std: f64,
) -> Result<(DMatrix<f64>, f64)> {
    let n = k.nrows();
    let noise_var = noise_std * noise_std;
    let mut reg = k.clone();
    for i in 0..n {
        reg[(i, i)] += noise_var;
    }
    if let Some(c) = reg.clone().cholesky() {
        return Ok((c.unpack(), 0.0));
    }
    let jitter = JITTER_REL * kernel_h.signal_variance;
    for i in 0..n {
        reg[(i, i)] += jitter;
    }
    match reg.cholesky() {
        Some(c) => Ok((c.unpack(), jitter)),
        None => Err(Error::NumericalFailure {
            context: "Cholesky of K + ε_y²I failed even with jitter",
            signal_variance: kernel_h.signal_variance,
            lengthscales: kernel_h.lengthscales.clone(),
            noise_std,
        }),
    }
}

impl GpModel {
    /// Fit a GP with fixed hyperparameters: assemble the kernel matrix,
    /// factorize it (with the jitter fallback), and cache α.
    pub fn fit(
        train: TrainingSet,
        kernel_h: KernelHyperparams,
        lik_h: LikelihoodHyperparams,
    ) -> Result<GpModel> {
        train.validate()?;
        kernel_h.validate()?;
        lik_h.validate()?;
        if train.dim() != kernel_h.dim() {
            return Err(Error::DimensionMismatch {
                context: "training dimension vs kernel lengthscales",
                expected: kernel_h.dim(),
                got: train.dim(),
            });
        }
        let k = kernel::kernel_matrix(&train.params, &kernel_h)?;
        let (chol, jitter) = factorize(&k, &kernel_h, lik_h.noise_std)?;
        let y = DVector::from_column_slice(&train.measurements);
        let mut alpha = chol.solve_lower_triangular(&y).expect("L has positive diagonal");
        chol.tr_solve_lower_triangular_mut(&mut alpha);
        Ok(GpModel {
            train,
            kernel_h,
            lik_h,
            chol,
            alpha,
            jitter,
            clamped: AtomicU64::new(0),
        })
    }

    pub fn train(&self) -> &TrainingSet {
        &self.train
    }

    pub fn kernel_h(&self) -> &KernelHyperparams {
        &self.kernel_h
    }

    pub fn lik_h(&self) -> &LikelihoodHyperparams {
        &self.lik_h
    }

    /// Number of training points.
    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }

    /// Diagonal jitter the factorization needed (0 in the common case).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// How many negative predicted variances have been clamped to zero over
    /// this model's lifetime.
    pub fn clamped_predictions(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Lower-triangular factor L with L·Lᵀ = K + (ε_y² + jitter)·I.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Cached solve α = (K + ε_y²I)⁻¹·y.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// c = L⁻¹·y, recovered as Lᵀ·α without a solve.
    pub(crate) fn half_solve(&self) -> DVector<f64> {
        self.chol.tr_mul(&self.alpha)
    }

    /// Posterior mean and variance at one query point.
    ///
    /// Negative variances from round-off are clamped to zero; clamps are
    /// counted in [`GpModel::clamped_predictions`] and logged at trace level.
    pub fn predict(&self, query: &[f64]) -> Result<PredictiveDist> {
        let k_star = kernel::cross_vector(query, &self.train.params, &self.kernel_h)?;
        let mean = k_star.dot(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&k_star)
            .expect("L has positive diagonal");
        let raw = self.kernel_h.signal_variance - v.norm_squared();
        let variance = if raw < 0.0 {
            self.clamped.fetch_add(1, Ordering::Relaxed);
            log::trace!("clamped negative predicted variance {raw:.3e} to 0");
            0.0
        } else {
            raw
        };
        Ok(PredictiveDist { mean, variance })
    }

    /// Log marginal likelihood of the training data under the current
    /// hyperparameters, with its analytic gradient over the
    /// log-hyperparameters (noise included only when `learn_noise` is set).
    pub fn log_marginal_likelihood(&self) -> (f64, LmlGrad) {
        let value = lml_value(&self.chol, &self.alpha, &self.train.measurements);
        // K̄⁻¹ = L⁻ᵀL⁻¹, built from the stored factor.
        let n = self.train.len();
        let mut linv = DMatrix::identity(n, n);
        self.chol.solve_lower_triangular_mut(&mut linv);
        let kinv = linv.tr_mul(&linv);
        let grad = lml_grad(
            &self.train,
            &self.kernel_h,
            self.lik_h,
            &self.alpha,
            &kinv,
        );
        (value, grad)
    }

    /// Grow the model by a block of training rows without refitting.
    ///
    /// Appends the new rows to the Cholesky factor via its Schur complement:
    ///
    /// ```text
    /// L⁺ = [ L   0  ]   with E = L⁻¹·K(old,new),
    ///      [ Eᵀ  L_S]        L_S·L_Sᵀ = K(new,new) + (ε_y²+jitter)·I − EᵀE
    /// ```
    ///
    /// and recomputes α against the grown factor. Hyperparameters are kept
    /// fixed; the result equals a fresh [`GpModel::fit`] on the concatenated
    /// data up to round-off. Fails (so callers can fall back to a full refit)
    /// when the Schur complement loses positive-definiteness.
    pub fn extend(&self, new_params: &[ParamVector], new_y: &[f64]) -> Result<GpModel> {
        if new_params.len() != new_y.len() {
            return Err(Error::DimensionMismatch {
                context: "extend params vs measurements",
                expected: new_params.len(),
                got: new_y.len(),
            });
        }
        if new_params.is_empty() {
            return Ok(self.clone());
        }
        let n = self.train.len();
        let m = new_params.len();
        for p in new_params {
            if p.len() != self.kernel_h.dim() {
                return Err(Error::DimensionMismatch {
                    context: "extend point dimension vs kernel lengthscales",
                    expected: self.kernel_h.dim(),
                    got: p.len(),
                });
            }
        }
        if new_y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "extend measurement is not finite".into(),
            ));
        }

        // Cross-kernel block K(old, new) and its solve E = L⁻¹·K_on.
        let mut k_on = DMatrix::zeros(n, m);
        for j in 0..m {
            for i in 0..n {
                k_on[(i, j)] =
                    kernel::eval_unchecked(&self.train.params[i], &new_params[j], &self.kernel_h);
            }
        }
        let e = self
            .chol
            .solve_lower_triangular(&k_on)
            .expect("L has positive diagonal");

        // Schur complement S = K_nn + (ε_y²+jitter)I − EᵀE, factorized.
        let noise_var = self.lik_h.noise_std * self.lik_h.noise_std + self.jitter;
        let mut s = DMatrix::zeros(m, m);
        for i in 0..m {
            s[(i, i)] = self.kernel_h.signal_variance + noise_var;
            for j in 0..i {
                let v = kernel::eval_unchecked(&new_params[i], &new_params[j], &self.kernel_h);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s -= e.tr_mul(&e);
        let l_s = match s.cholesky() {
            Some(c) => c.unpack(),
            None => {
                return Err(Error::NumericalFailure {
                    context: "Schur complement lost positive-definiteness in extend",
                    signal_variance: self.kernel_h.signal_variance,
                    lengthscales: self.kernel_h.lengthscales.clone(),
                    noise_std: self.lik_h.noise_std,
                })
            }
        };

        // Assemble the grown factor.
        let total = n + m;
        let mut chol = DMatrix::zeros(total, total);
        chol.view_mut((0, 0), (n, n)).copy_from(&self.chol);
        chol.view_mut((n, 0), (m, n)).copy_from(&e.transpose());
        chol.view_mut((n, n), (m, m)).copy_from(&l_s);

        let mut train = self.train.clone();
        for (p, &y) in new_params.iter().zip(new_y) {
            train.push(p.clone(), y);
        }
        let y = DVector::from_column_slice(&train.measurements);
        let mut alpha = chol.solve_lower_triangular(&y).expect("L has positive diagonal");
        chol.tr_solve_lower_triangular_mut(&mut alpha);

        Ok(GpModel {
            train,
            kernel_h: self.kernel_h.clone(),
            lik_h: self.lik_h,
            chol,
            alpha,
            jitter: self.jitter,
            clamped: AtomicU64::new(self.clamped.load(Ordering::Relaxed)),
        })
    }

    /// Maximum-likelihood hyperparameter estimation: multi-start gradient
    /// ascent in log-hyperparameter space with backtracking line search.
    ///
    /// Restart 0 starts from `init`/`lik_init` exactly; restart `j` perturbs
    /// every log-hyperparameter by an offset drawn from a fixed counter-based
    /// sequence (log-uniform within e^±2 of the initial value), so the result
    /// is deterministic for given inputs. Returns the model with the best log
    /// marginal likelihood found.
    pub fn fit_mle(
        train: TrainingSet,
        init: KernelHyperparams,
        lik_init: LikelihoodHyperparams,
        restarts: usize,
    ) -> Result<GpModel> {
        if restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be ≥ 1".into()));
        }
        train.validate()?;
        init.validate()?;
        lik_init.validate()?;
        if train.dim() != init.dim() {
            return Err(Error::DimensionMismatch {
                context: "training dimension vs kernel lengthscales",
                expected: init.dim(),
                got: train.dim(),
            });
        }

        let base = pack_log_params(&init, lik_init);
        let mut best: Option<(f64, GpModel)> = None;
        let mut last_error = String::from("no restart attempted");

        for restart in 0..restarts {
            let mut eta = base.clone();
            if restart > 0 {
                // Fixed counter-based perturbation, log-uniform in e^±2.
                let mut state = 0x9e37_79b9_97f4_a7c5u64
                    .wrapping_mul(restart as u64 + 1)
                    .wrapping_add(0x2545_f491_4f6c_dd1d);
                for v in eta.iter_mut() {
                    state = splitmix64(state);
                    let u = (state >> 11) as f64 / (1u64 << 53) as f64; // [0,1)
                    *v += 4.0 * u - 2.0;
                }
                clamp_log_params(&mut eta);
            }
            match ascend(&train, &init, lik_init, eta) {
                Ok((lml, model)) => {
                    if best.as_ref().map_or(true, |(b, _)| lml > *b) {
                        best = Some((lml, model));
                    }
                }
                Err(e) => last_error = e.to_string(),
            }
        }

        match best {
            Some((_, model)) => Ok(model),
            None => Err(Error::MleFailed {
                restarts,
                last_error,
            }),
        }
    }
}

/// −½·yᵀα − Σ log L_ii − (N/2)·log 2π from cached factorization parts.
fn lml_value(chol: &DMatrix<f64>, alpha: &DVector<f64>, y: &[f64]) -> f64 {
    let n = y.len();
    let fit: f64 = y.iter().zip(alpha.iter()).map(|(a, b)| a * b).sum();
    let logdet: f64 = (0..n).map(|i| chol[(i, i)].ln()).sum();
    -0.5 * fit - logdet - 0.5 * n as f64 * LN_2PI
}

/// ½·tr((ααᵀ − K̄⁻¹)·∂K̄/∂η) for every log-hyperparameter η.
///
/// The kernel-matrix partials are `∂K̄/∂log σ_f² = K`,
/// `∂K̄/∂log ℓ_d = K ∘ D_d` with `D_d,ij = ((θ_i,d − θ_j,d)/ℓ_d)²`, and
/// `∂K̄/∂log ε_y = 2ε_y²·I`; everything is accumulated in one pass over pairs.
fn lml_grad(
    train: &TrainingSet,
    kernel_h: &KernelHyperparams,
    lik_h: LikelihoodHyperparams,
    alpha: &DVector<f64>,
    kinv: &DMatrix<f64>,
) -> LmlGrad {
    let n = train.len();
    let p = kernel_h.dim();
    let mut g_sig = 0.0;
    let mut g_len = vec![0.0; p];
    let mut a_trace = 0.0; // tr(ααᵀ − K̄⁻¹)

    for i in 0..n {
        let a_ii = alpha[i] * alpha[i] - kinv[(i, i)];
        a_trace += a_ii;
        // Diagonal kernel entry is σ_f², with zero lengthscale sensitivity.
        g_sig += 0.5 * a_ii * kernel_h.signal_variance;
        for j in 0..i {
            let a_ij = alpha[i] * alpha[j] - kinv[(i, j)];
            let k_ij = kernel::eval_unchecked(&train.params[i], &train.params[j], kernel_h);
            // Off-diagonal pairs contribute twice by symmetry.
            g_sig += a_ij * k_ij;
            for d in 0..p {
                let z = (train.params[i][d] - train.params[j][d]) / kernel_h.lengthscales[d];
                g_len[d] += a_ij * k_ij * z * z;
            }
        }
    }

    let d_log_noise_std = lik_h.learn_noise.then(|| {
        let noise_var = lik_h.noise_std * lik_h.noise_std;
        a_trace * noise_var
    });

    LmlGrad {
        d_log_signal_variance: g_sig,
        d_log_lengthscales: g_len,
        d_log_noise_std,
    }
}

/// splitmix64 mixing step (public-domain construction), used for the fixed
/// restart-offset sequence here and for per-sample seed derivation in the
/// benchmark systems.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn pack_log_params(h: &KernelHyperparams, lik: LikelihoodHyperparams) -> Vec<f64> {
    let mut eta = Vec::with_capacity(h.dim() + 2);
    eta.push(h.signal_variance.ln());
    eta.extend(h.lengthscales.iter().map(|l| l.ln()));
    if lik.learn_noise {
        eta.push(lik.noise_std.ln());
    }
    eta
}

fn unpack_log_params(
    eta: &[f64],
    template: &KernelHyperparams,
    lik: LikelihoodHyperparams,
) -> (KernelHyperparams, LikelihoodHyperparams) {
    let p = template.dim();
    let kernel_h = KernelHyperparams {
        signal_variance: eta[0].exp(),
        lengthscales: eta[1..1 + p].iter().map(|v| v.exp()).collect(),
    };
    let mut out_lik = lik;
    if lik.learn_noise {
        out_lik.noise_std = eta[1 + p].exp();
    }
    (kernel_h, out_lik)
}

/// Keep log-hyperparameters inside a sane box so exp() cannot overflow.
fn clamp_log_params(eta: &mut [f64]) {
    for v in eta.iter_mut() {
        *v = v.clamp(-18.0, 18.0);
    }
}

/// Evaluate the LML (and the fitted model) at one log-hyperparameter point.
fn eval_lml(
    train: &TrainingSet,
    template: &KernelHyperparams,
    lik: LikelihoodHyperparams,
    eta: &[f64],
) -> Result<(f64, GpModel)> {
    let (kernel_h, lik_h) = unpack_log_params(eta, template, lik);
    let model = GpModel::fit(train.clone(), kernel_h, lik_h)?;
    let value = lml_value(&model.chol, &model.alpha, &model.train.measurements);
    Ok((value, model))
}

/// Gradient of the LML at an already-fitted model (shares the factorization).
fn eval_grad(model: &GpModel) -> Vec<f64> {
    let n = model.train.len();
    let mut linv = DMatrix::identity(n, n);
    model.chol.solve_lower_triangular_mut(&mut linv);
    let kinv = linv.tr_mul(&linv);
    let g = lml_grad(
        &model.train,
        &model.kernel_h,
        model.lik_h,
        &model.alpha,
        &kinv,
    );
    let mut out = Vec::with_capacity(model.kernel_h.dim() + 2);
    out.push(g.d_log_signal_variance);
    out.extend(g.d_log_lengthscales.iter().copied());
    if let Some(gn) = g.d_log_noise_std {
        out.push(gn);
    }
    out
}

/// One gradient-ascent run from a starting point, returning the best
/// (LML, model) it reached.
fn ascend(
    train: &TrainingSet,
    template: &KernelHyperparams,
    lik: LikelihoodHyperparams,
    mut eta: Vec<f64>,
) -> Result<(f64, GpModel)> {
    const MAX_ITERS: usize = 60;
    const GRAD_TOL: f64 = 1e-5;
    const ARMIJO_C1: f64 = 1e-4;
    const MAX_BACKTRACKS: usize = 25;

    clamp_log_params(&mut eta);
    let (mut f, mut model) = eval_lml(train, template, lik, &eta)?;
    let mut grad = eval_grad(&model);
    let mut step = {
        let ginf = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if ginf > 1.0 {
            1.0 / ginf
        } else {
            1.0
        }
    };

    for _ in 0..MAX_ITERS {
        let ginf = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if ginf < GRAD_TOL {
            break;
        }
        let mut improved = false;
        let mut t = step;
        for _ in 0..MAX_BACKTRACKS {
            let mut cand: Vec<f64> = eta.iter().zip(&grad).map(|(e, g)| e + t * g).collect();
            clamp_log_params(&mut cand);
            // Directional progress measured along the actual (clamped) move.
            let progress: f64 = cand
                .iter()
                .zip(&eta)
                .zip(&grad)
                .map(|((c, e), g)| (c - e) * g)
                .sum();
            if progress <= 0.0 {
                t *= 0.5;
                continue;
            }
            if let Ok((f_new, model_new)) = eval_lml(train, template, lik, &cand) {
                if f_new >= f + ARMIJO_C1 * progress {
                    eta = cand;
                    f = f_new;
                    model = model_new;
                    grad = eval_grad(&model);
                    step = (t * 1.5).min(4.0);
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok((f, model))
}

/// Moment-based starting point for the hyperparameter ascent: signal
/// variance from the measurement variance (floored so a flat initial design
/// still moves), lengthscales at 20% of the given per-dimension spans.
/// Multi-start perturbations around this point do the real exploration.
pub fn moment_init(measurements: &[f64], spans: &[f64]) -> Result<KernelHyperparams> {
    if measurements.is_empty() || spans.is_empty() {
        return Err(Error::InvalidArgument(
            "moment_init needs measurements and at least one span".into(),
        ));
    }
    for &s in spans {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "spans must be finite and positive, got {s}"
            )));
        }
    }
    let mean = measurements.iter().sum::<f64>() / measurements.len() as f64;
    let var = measurements.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>()
        / measurements.len() as f64;
    Ok(KernelHyperparams {
        signal_variance: var.max(1e-4),
        lengthscales: spans.iter().map(|s| 0.2 * s).collect(),
    })
}

/// Incremental posterior evaluator over a fixed set of query points.
///
/// For every query q the predictor caches `v_q = L⁻¹·K(train, q)`, stored as
/// growing column prefixes inside fixed-capacity chunk matrices. Appending a
/// block of M training rows updates every cached prefix with one GEMM and one
/// small triangular solve per chunk (O(N·M) per query), after which means and
/// variances for the whole lattice come from
///
/// ```text
/// μ_q = v_qᵀ·(L⁻¹y),    Σ_q = σ_f² − ‖v_q‖².
/// ```
///
/// `rebuild` replays the model's whole training set through the same block
/// path (used after a hyperparameter refit invalidates the cache). Results
/// match [`GpModel::predict`] up to round-off; the equivalence is covered by
/// tests. Chunks are processed in parallel with deterministic per-chunk
/// arithmetic, so thread count never changes results.
pub struct LatticePredictor {
    /// Queries, flattened row-major (point-major) for cache-friendly access.
    points_flat: Vec<f64>,
    dim: usize,
    n_points: usize,
    chunk_cols: usize,
    capacity: usize,
    /// Per chunk: capacity × cols matrix whose first `n_rows` rows hold v_q.
    chunks: Vec<DMatrix<f64>>,
    /// Per query: ‖v_q‖² over the filled prefix.
    ssq: Vec<f64>,
    n_rows: usize,
}

/// Row-block size for rebuild replays: big enough that the GEMM against the
/// cached prefix dominates, small enough that the per-block triangular solve
/// stays cheap.
const REBUILD_BLOCK: usize = 64;

impl LatticePredictor {
    /// `capacity` is the largest training-set size the cache should hold
    /// before reallocating (the experiment budget, typically).
    pub fn new(points: &[ParamVector], capacity: usize) -> Result<Self> {
        let n_points = points.len();
        let dim = points.first().map_or(0, |p| p.len());
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "lattice point dimension",
                    expected: dim,
                    got: p.len(),
                });
            }
        }
        let mut points_flat = Vec::with_capacity(n_points * dim);
        for p in points {
            points_flat.extend_from_slice(p);
        }
        let chunk_cols = 4096usize;
        let capacity = capacity.max(1);
        let mut chunks = Vec::new();
        let mut start = 0;
        while start < n_points {
            let cols = chunk_cols.min(n_points - start);
            chunks.push(DMatrix::zeros(capacity, cols));
            start += cols;
        }
        Ok(LatticePredictor {
            points_flat,
            dim,
            n_points,
            chunk_cols,
            capacity,
            chunks,
            ssq: vec![0.0; n_points],
            n_rows: 0,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Training rows currently cached.
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn ensure_capacity(&mut self, needed: usize) {
        if needed <= self.capacity {
            return;
        }
        let new_cap = needed.max(self.capacity * 2);
        for chunk in &mut self.chunks {
            let cols = chunk.ncols();
            let mut grown = DMatrix::zeros(new_cap, cols);
            grown
                .view_mut((0, 0), (self.n_rows, cols))
                .copy_from(&chunk.view((0, 0), (self.n_rows, cols)));
            *chunk = grown;
        }
        self.capacity = new_cap;
    }

    /// Drop the cache and replay the model's full training set.
    pub fn rebuild(&mut self, model: &GpModel) -> Result<()> {
        self.check_model(model)?;
        self.n_rows = 0;
        self.ssq.fill(0.0);
        self.ensure_capacity(model.len());
        let mut row = 0;
        while row < model.len() {
            let hi = (row + REBUILD_BLOCK).min(model.len());
            self.append_rows(model, row, hi);
            row = hi;
        }
        self.n_rows = model.len();
        Ok(())
    }

    /// Fold the rows `self.n_rows..model.len()` of an extended model into the
    /// cache. The model must share its first `n_rows` training rows (and its
    /// factorization prefix) with the model the cache was built from — which
    /// is exactly what [`GpModel::extend`] produces.
    pub fn append(&mut self, model: &GpModel) -> Result<()> {
        self.check_model(model)?;
        if model.len() < self.n_rows {
            return Err(Error::InvalidArgument(
                "appended model is smaller than the cached prefix".into(),
            ));
        }
        self.ensure_capacity(model.len());
        let (lo, hi) = (self.n_rows, model.len());
        if lo < hi {
            self.append_rows(model, lo, hi);
            self.n_rows = hi;
        }
        Ok(())
    }

    fn check_model(&self, model: &GpModel) -> Result<()> {
        if model.kernel_h().dim() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "lattice dimension vs kernel lengthscales",
                expected: self.dim,
                got: model.kernel_h().dim(),
            });
        }
        Ok(())
    }

    /// Append factor rows [lo, hi) across all chunks:
    /// `W = L_S⁻¹·(K(new, q) − Eᵀ·V_prefix)` per chunk, then `ssq += ‖W‖²`
    /// column-wise.
    fn append_rows(&mut self, model: &GpModel, lo: usize, hi: usize) {
        let m = hi - lo;
        let l = model.chol();
        let e_t = l.view((lo, 0), (m, lo)); // Eᵀ
        let l_s = l.view((lo, lo), (m, m));
        let h = model.kernel_h();
        let train = &model.train().params[lo..hi];
        let dim = self.dim;
        let points_flat = &self.points_flat;
        let chunk_cols = self.chunk_cols;
        let prefix = lo;

        self.chunks
            .par_iter_mut()
            .zip(self.ssq.par_chunks_mut(chunk_cols))
            .enumerate()
            .for_each(|(ci, (chunk, ssq))| {
                let col0 = ci * chunk_cols;
                let cols = chunk.ncols();
                // Cross-kernel block K(new rows, chunk queries).
                let mut w = DMatrix::zeros(m, cols);
                for c in 0..cols {
                    let q = &points_flat[(col0 + c) * dim..(col0 + c + 1) * dim];
                    for r in 0..m {
                        w[(r, c)] = kernel::eval_unchecked(&train[r], q, h);
                    }
                }
                if prefix > 0 {
                    let v_prefix = chunk.view((0, 0), (prefix, cols));
                    w.gemm(-1.0, &e_t, &v_prefix, 1.0);
                }
                let ok = l_s.solve_lower_triangular_mut(&mut w);
                debug_assert!(ok, "Cholesky block must have a positive diagonal");
                chunk.view_mut((lo, 0), (m, cols)).copy_from(&w);
                for c in 0..cols {
                    let mut acc = 0.0;
                    for r in 0..m {
                        let x = w[(r, c)];
                        acc += x * x;
                    }
                    ssq[c] += acc;
                }
            });
    }

    /// Posterior mean and variance at every query point, in lattice order.
    ///
    /// The cache must be aligned with `model` (same training rows), i.e.
    /// `rebuild`/`append` was called for it.
    pub fn evaluate(&self, model: &GpModel) -> Result<Vec<PredictiveDist>> {
        self.check_model(model)?;
        if model.len() != self.n_rows {
            return Err(Error::InvalidArgument(format!(
                "cache holds {} rows but model has {} training points",
                self.n_rows,
                model.len()
            )));
        }
        let c = model.half_solve(); // L⁻¹y
        let sig = model.kernel_h().signal_variance;
        let n = self.n_rows;
        let chunk_cols = self.chunk_cols;
        let mut out = vec![PredictiveDist { mean: 0.0, variance: 0.0 }; self.n_points];

        self.chunks
            .par_iter()
            .zip(self.ssq.par_chunks(chunk_cols))
            .zip(out.par_chunks_mut(chunk_cols))
            .for_each(|((chunk, ssq), out)| {
                let cols = chunk.ncols();
                if n == 0 {
                    for o in out.iter_mut() {
                        *o = PredictiveDist { mean: 0.0, variance: sig };
                    }
                    return;
                }
                let v = chunk.view((0, 0), (n, cols));
                let mu = v.tr_mul(&c);
                for ci in 0..cols {
                    out[ci] = PredictiveDist {
                        mean: mu[ci],
                        variance: (sig - ssq[ci]).max(0.0),
                    };
                }
            });
        Ok(out)
    }
}
