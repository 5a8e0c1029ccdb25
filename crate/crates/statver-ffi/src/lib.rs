//! C ABI over the verification toolkit.
//!
//! The surface is deliberately small: train/query a GP surrogate through an
//! opaque handle, evaluate the satisfaction-probability calculus on (μ, Σ)
//! pairs, and compute STL robustness for sampled trajectories. Every
//! function returns a [`StatverStatus`]; on any non-OK status a
//! human-readable explanation is available from
//! [`statver_last_error_message`] until the next call on the same thread.
//!
//! Conventions:
//! * Parameter matrices are row-major: `params` holds `n × dim` doubles,
//!   point by point.
//! * Out-parameters are written only when the status is OK.
//! * Handles from `statver_gp_fit`/`statver_gp_fit_mle` are owned by the
//!   caller and released with `statver_gp_free` exactly once.
//! * All functions are panic-safe: internal panics surface as
//!   `STATVER_STATUS_INTERNAL_PANIC` instead of unwinding across the ABI.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use statver::gp::{GpModel, LikelihoodHyperparams, PredictiveDist, TrainingSet};
use statver::kernel::KernelHyperparams;
use statver::stl::{self, Trajectory};
use statver::verify;
use statver::Error;

/// Result of every ABI call. Besides `Ok`, `NullArgument`, and
/// `InternalPanic` (which originate at the boundary itself), each code
/// corresponds to one error class of the underlying library.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatverStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    NumericalFailure = 4,
    /// Hyperparameter estimation failed on every restart.
    MleFailed = 5,
    /// Formula text failed to parse; the message carries a byte position.
    ParseError = 6,
    UnknownChannel = 7,
    /// A temporal window extends beyond the trajectory's time range.
    WindowOutsideTrajectory = 8,
    /// A simulated state stopped being finite.
    SimulationDiverged = 9,
    OutOfBounds = 10,
    ConfigError = 11,
    IoError = 12,
    DecodeError = 13,
    /// An internal panic was caught at the boundary.
    InternalPanic = 14,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let sanitized: Vec<u8> = message.bytes().filter(|&b| b != 0).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("nul bytes removed");
    });
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::default());
}

// Exhaustive on purpose: a new library error class must pick a code here.
fn status_of(err: &Error) -> StatverStatus {
    match err {
        Error::DimensionMismatch { .. } => StatverStatus::DimensionMismatch,
        Error::InvalidArgument(_) => StatverStatus::InvalidArgument,
        Error::NumericalFailure { .. } => StatverStatus::NumericalFailure,
        Error::MleFailed { .. } => StatverStatus::MleFailed,
        Error::StlParse { .. } => StatverStatus::ParseError,
        Error::UnknownChannel(_) => StatverStatus::UnknownChannel,
        Error::WindowOutsideTrajectory { .. } => StatverStatus::WindowOutsideTrajectory,
        Error::SimulationDiverged(_) => StatverStatus::SimulationDiverged,
        Error::OutOfBounds { .. } => StatverStatus::OutOfBounds,
        Error::Config { .. } => StatverStatus::ConfigError,
        Error::Io { .. } => StatverStatus::IoError,
        Error::Decode { .. } => StatverStatus::DecodeError,
    }
}

fn fail(err: &Error) -> StatverStatus {
    set_last_error(&err.to_string());
    status_of(err)
}

fn fail_null(what: &str) -> StatverStatus {
    set_last_error(&format!("{what} must not be null"));
    StatverStatus::NullArgument
}

fn fail_invalid(message: &str) -> StatverStatus {
    set_last_error(message);
    StatverStatus::InvalidArgument
}

/// Runs a body with panic containment; panics become a status.
fn guarded(body: impl FnOnce() -> StatverStatus) -> StatverStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic caught at the ABI boundary");
            StatverStatus::InternalPanic
        }
    }
}

/// Explanation of the most recent non-OK status on this thread. The pointer
/// stays valid until the next failing call on the same thread. Never null;
/// empty when no error has occurred yet.
#[no_mangle]
pub extern "C" fn statver_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Static name of a status code (e.g. `"OK"`, `"PARSE_ERROR"`).
#[no_mangle]
pub extern "C" fn statver_status_name(status: StatverStatus) -> *const c_char {
    let name: &'static [u8] = match status {
        StatverStatus::Ok => b"OK\0",
        StatverStatus::NullArgument => b"NULL_ARGUMENT\0",
        StatverStatus::InvalidArgument => b"INVALID_ARGUMENT\0",
        StatverStatus::DimensionMismatch => b"DIMENSION_MISMATCH\0",
        StatverStatus::NumericalFailure => b"NUMERICAL_FAILURE\0",
        StatverStatus::MleFailed => b"MLE_FAILED\0",
        StatverStatus::ParseError => b"PARSE_ERROR\0",
        StatverStatus::UnknownChannel => b"UNKNOWN_CHANNEL\0",
        StatverStatus::WindowOutsideTrajectory => b"WINDOW_OUTSIDE_TRAJECTORY\0",
        StatverStatus::SimulationDiverged => b"SIMULATION_DIVERGED\0",
        StatverStatus::OutOfBounds => b"OUT_OF_BOUNDS\0",
        StatverStatus::ConfigError => b"CONFIG_ERROR\0",
        StatverStatus::IoError => b"IO_ERROR\0",
        StatverStatus::DecodeError => b"DECODE_ERROR\0",
        StatverStatus::InternalPanic => b"INTERNAL_PANIC\0",
    };
    name.as_ptr() as *const c_char
}

/// Opaque trained-model handle.
pub struct StatverGp {
    model: GpModel,
}

/// Marshals a row-major `n × dim` parameter matrix plus measurements into a
/// training set.
///
/// # Safety
/// `params` must point to `n * dim` doubles and `measurements` to `n`.
unsafe fn training_set(
    params: *const f64,
    n: usize,
    dim: usize,
    measurements: *const f64,
) -> Result<TrainingSet, StatverStatus> {
    if params.is_null() {
        return Err(fail_null("params"));
    }
    if measurements.is_null() {
        return Err(fail_null("measurements"));
    }
    if n == 0 || dim == 0 {
        return Err(fail_invalid("n and dim must be positive"));
    }
    let flat = std::slice::from_raw_parts(params, n * dim);
    let ys = std::slice::from_raw_parts(measurements, n);
    Ok(TrainingSet::new(
        flat.chunks_exact(dim).map(|c| c.to_vec()).collect(),
        ys.to_vec(),
    ))
}

unsafe fn deliver(out: *mut *mut StatverGp, model: GpModel) -> StatverStatus {
    if out.is_null() {
        return fail_null("out");
    }
    *out = Box::into_raw(Box::new(StatverGp { model }));
    clear_last_error();
    StatverStatus::Ok
}

/// Trains a GP with fixed hyperparameters.
///
/// `params` is row-major `n × dim`; `lengthscales` has `dim` entries.
/// On success `*out` receives an owned handle (release with
/// `statver_gp_free`).
///
/// # Safety
/// Pointers must cover the documented extents and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn statver_gp_fit(
    params: *const f64,
    n: usize,
    dim: usize,
    measurements: *const f64,
    signal_variance: f64,
    lengthscales: *const f64,
    noise_std: f64,
    out: *mut *mut StatverGp,
) -> StatverStatus {
    guarded(|| {
        let train = match training_set(params, n, dim, measurements) {
            Ok(t) => t,
            Err(status) => return status,
        };
        if lengthscales.is_null() {
            return fail_null("lengthscales");
        }
        let kernel_h = KernelHyperparams {
            signal_variance,
            lengthscales: std::slice::from_raw_parts(lengthscales, dim).to_vec(),
        };
        match GpModel::fit(train, kernel_h, LikelihoodHyperparams::fixed(noise_std)) {
            Ok(model) => deliver(out, model),
            Err(e) => fail(&e),
        }
    })
}

/// Trains a GP with hyperparameters estimated by multi-start likelihood
/// ascent (deterministic for identical inputs). `noise_std` is the
/// observation noise, estimated too when `learn_noise` is set.
///
/// # Safety
/// As for `statver_gp_fit`.
#[no_mangle]
pub unsafe extern "C" fn statver_gp_fit_mle(
    params: *const f64,
    n: usize,
    dim: usize,
    measurements: *const f64,
    noise_std: f64,
    learn_noise: bool,
    restarts: usize,
    out: *mut *mut StatverGp,
) -> StatverStatus {
    guarded(|| {
        let train = match training_set(params, n, dim, measurements) {
            Ok(t) => t,
            Err(status) => return status,
        };
        // Starting lengthscales from the spread of the training inputs; a
        // dimension with no spread gets a unit span to keep the search sane.
        let spans: Vec<f64> = (0..dim)
            .map(|d| {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for p in &train.params {
                    lo = lo.min(p[d]);
                    hi = hi.max(p[d]);
                }
                if hi > lo {
                    hi - lo
                } else {
                    1.0
                }
            })
            .collect();
        let init = match statver::gp::moment_init(&train.measurements, &spans) {
            Ok(init) => init,
            Err(e) => return fail(&e),
        };
        let lik = LikelihoodHyperparams {
            noise_std,
            learn_noise,
        };
        match GpModel::fit_mle(train, init, lik, restarts) {
            Ok(model) => deliver(out, model),
            Err(e) => fail(&e),
        }
    })
}

/// Posterior mean and variance at one query point.
///
/// # Safety
/// `model` must be a live handle, `theta` must hold `dim` doubles matching
/// the training dimension, and the out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn statver_gp_predict(
    model: *const StatverGp,
    theta: *const f64,
    dim: usize,
    out_mean: *mut f64,
    out_variance: *mut f64,
) -> StatverStatus {
    guarded(|| {
        if model.is_null() {
            return fail_null("model");
        }
        if theta.is_null() {
            return fail_null("theta");
        }
        if out_mean.is_null() || out_variance.is_null() {
            return fail_null("out_mean/out_variance");
        }
        let query = std::slice::from_raw_parts(theta, dim);
        match (*model).model.predict(query) {
            Ok(dist) => {
                *out_mean = dist.mean;
                *out_variance = dist.variance;
                clear_last_error();
                StatverStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of training points held by the model; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn statver_gp_train_len(model: *const StatverGp) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).model.len()
}

/// Parameter-space dimension of the model; 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn statver_gp_dim(model: *const StatverGp) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).model.kernel_h().lengthscales.len()
}

/// Releases a handle. Null is a no-op; handles must not be used afterwards.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn statver_gp_free(model: *mut StatverGp) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn write_scalar(out: *mut f64, value: f64) -> StatverStatus {
    if out.is_null() {
        return fail_null("out");
    }
    if !value.is_finite() {
        set_last_error(&format!("result is not finite ({value})"));
        return StatverStatus::NumericalFailure;
    }
    *out = value;
    clear_last_error();
    StatverStatus::Ok
}

fn check_finite(name: &str, value: f64) -> Result<(), StatverStatus> {
    if !value.is_finite() {
        return Err(fail_invalid(&format!("{name} must be finite, got {value}")));
    }
    Ok(())
}

fn check_nonneg(name: &str, value: f64) -> Result<(), StatverStatus> {
    check_finite(name, value)?;
    if value < 0.0 {
        return Err(fail_invalid(&format!(
            "{name} must be non-negative, got {value}"
        )));
    }
    Ok(())
}

fn check_positive(name: &str, value: f64) -> Result<(), StatverStatus> {
    check_finite(name, value)?;
    if value <= 0.0 {
        return Err(fail_invalid(&format!(
            "{name} must be positive, got {value}"
        )));
    }
    Ok(())
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Satisfaction probability when the latent requirement value is known
/// exactly: Φ-style CDF of `latent_mean` against noise `noise_std`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn statver_true_p_sat(
    latent_mean: f64,
    noise_std: f64,
    out: *mut f64,
) -> StatverStatus {
    guarded(|| {
        try_status!(check_finite("latent_mean", latent_mean));
        try_status!(check_positive("noise_std", noise_std));
        write_scalar(out, verify::true_p_sat(latent_mean, noise_std))
    })
}

/// Predicted satisfaction probability under a GP posterior (μ, Σ).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn statver_predicted_p_sat(
    mean: f64,
    variance: f64,
    noise_std: f64,
    out: *mut f64,
) -> StatverStatus {
    guarded(|| {
        try_status!(check_finite("mean", mean));
        try_status!(check_nonneg("variance", variance));
        try_status!(check_positive("noise_std", noise_std));
        let dist = PredictiveDist { mean, variance };
        write_scalar(out, verify::predicted_p_sat(dist, noise_std))
    })
}

/// First-order variance of the predicted satisfaction probability.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn statver_cdf_variance(
    mean: f64,
    variance: f64,
    noise_std: f64,
    out: *mut f64,
) -> StatverStatus {
    guarded(|| {
        try_status!(check_finite("mean", mean));
        try_status!(check_nonneg("variance", variance));
        try_status!(check_positive("noise_std", noise_std));
        let dist = PredictiveDist { mean, variance };
        write_scalar(out, verify::cdf_variance(dist, noise_std))
    })
}

/// Posterior variance after one hypothetical sample at the point.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn statver_posterior_variance_after_sample(
    mean: f64,
    variance: f64,
    noise_std: f64,
    out: *mut f64,
) -> StatverStatus {
    guarded(|| {
        try_status!(check_finite("mean", mean));
        try_status!(check_nonneg("variance", variance));
        try_status!(check_positive("noise_std", noise_std));
        let dist = PredictiveDist { mean, variance };
        write_scalar(out, verify::posterior_variance_after_sample(dist, noise_std))
    })
}

/// Reduction in CDF variance from one hypothetical sample at the point —
/// the acquisition score of the proposed sampling strategy.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn statver_variance_reduction(
    mean: f64,
    variance: f64,
    noise_std: f64,
    out: *mut f64,
) -> StatverStatus {
    guarded(|| {
        try_status!(check_finite("mean", mean));
        try_status!(check_nonneg("variance", variance));
        try_status!(check_positive("noise_std", noise_std));
        let dist = PredictiveDist { mean, variance };
        write_scalar(out, verify::variance_reduction(dist, noise_std))
    })
}

/// Chebyshev-style diagnostic bound `min(1, V/a²)` on the probability that
/// the predicted satisfaction probability is off by more than `a`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn statver_chebyshev_bound(
    cdf_variance: f64,
    a: f64,
    out: *mut f64,
) -> StatverStatus {
    guarded(|| match verify::chebyshev_bound(cdf_variance, a) {
        Ok(v) => write_scalar(out, v),
        Err(e) => fail(&e),
    })
}

/// Parses a requirement formula, reporting only whether it is valid. On
/// failure the error message pinpoints the byte position.
///
/// # Safety
/// `spec` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn statver_stl_parse_check(spec: *const c_char) -> StatverStatus {
    guarded(|| {
        if spec.is_null() {
            return fail_null("spec");
        }
        let text = match CStr::from_ptr(spec).to_str() {
            Ok(t) => t,
            Err(_) => return fail_invalid("spec is not valid UTF-8"),
        };
        match stl::parse(text) {
            Ok(_) => {
                clear_last_error();
                StatverStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Quantitative robustness of a formula over a sampled trajectory.
///
/// The trajectory holds `n_channels` named channels sampled at the same
/// `n_samples` strictly increasing times: `channel_names[i]` names the
/// channel whose values live at `channel_values[i][0..n_samples]`.
///
/// # Safety
/// `spec` and each `channel_names[i]` must be NUL-terminated strings;
/// `times` must hold `n_samples` doubles; `channel_values` must hold
/// `n_channels` pointers to `n_samples` doubles each; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn statver_stl_robustness(
    spec: *const c_char,
    times: *const f64,
    n_samples: usize,
    channel_names: *const *const c_char,
    channel_values: *const *const f64,
    n_channels: usize,
    out: *mut f64,
) -> StatverStatus {
    guarded(|| {
        if spec.is_null() {
            return fail_null("spec");
        }
        if times.is_null() {
            return fail_null("times");
        }
        if channel_names.is_null() || channel_values.is_null() {
            return fail_null("channel_names/channel_values");
        }
        let text = match CStr::from_ptr(spec).to_str() {
            Ok(t) => t,
            Err(_) => return fail_invalid("spec is not valid UTF-8"),
        };
        let formula = match stl::parse(text) {
            Ok(f) => f,
            Err(e) => return fail(&e),
        };
        let times = std::slice::from_raw_parts(times, n_samples).to_vec();
        let names = std::slice::from_raw_parts(channel_names, n_channels);
        let values = std::slice::from_raw_parts(channel_values, n_channels);
        let mut channels = Vec::with_capacity(n_channels);
        for (i, (&name, &data)) in names.iter().zip(values).enumerate() {
            if name.is_null() || data.is_null() {
                return fail_invalid(&format!("channel {i} has a null name or data pointer"));
            }
            let name = match CStr::from_ptr(name).to_str() {
                Ok(n) => n.to_string(),
                Err(_) => return fail_invalid(&format!("channel {i} name is not valid UTF-8")),
            };
            channels.push((name, std::slice::from_raw_parts(data, n_samples).to_vec()));
        }
        let traj = match Trajectory::new(times, channels) {
            Ok(t) => t,
            Err(e) => return fail(&e),
        };
        match stl::robustness(&formula, &traj) {
            Ok(rho) => write_scalar(out, rho),
            Err(e) => fail(&e),
        }
    })
}
