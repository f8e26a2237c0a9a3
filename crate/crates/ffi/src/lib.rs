//! C ABI over `bnn-core`.
//!
//! Objects cross the boundary as opaque handles created by `bnn_*_new` or a fit call and
//! released by the matching `bnn_*_free`. Every fallible call returns a [`BnnStatus`]; the
//! message of the most recent failure on the calling thread is available from
//! [`bnn_last_error_message`]. Matrices are dense row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use bnn_core::assess::{elpd_loo, elpd_waic, ElpdMethod, ElpdResult, LogLikMatrix, WaicPenalty};
use bnn_core::combine::{pseudo_bma_weights, stacking_weights_log};
use bnn_core::draws::PosteriorDraws;
use bnn_core::experiment::{self, ExperimentSpec, RunOptions};
use bnn_core::hmc::NutsConfig;
use bnn_core::model::{grad_log_posterior, log_posterior, Activation, Dataset, NetworkConfig, ParamVector, PriorFamily};
use bnn_core::predictive::posterior_predictive;
use bnn_core::recipe::{fit_posterior, InferenceRecipe};
use bnn_core::vi::ViConfig;
use bnn_core::Error;
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    DimensionMismatch = 4,
    /// Divergence, non-finite values or a failed sampler initialisation.
    Numeric = 5,
    Io = 6,
    MissingArtifact = 7,
    Parse = 8,
    /// A Rust panic was caught at the boundary.
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnnActivation {
    Relu = 0,
    Sigmoid = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnnPrior {
    Gaussian = 0,
    StudentT = 1,
}

/// Network architecture and prior.
pub struct BnnModel(NetworkConfig);

/// Inputs and targets.
pub struct BnnDataset(Dataset);

/// Posterior draws from either engine.
pub struct BnnDraws(PosteriorDraws);

/// Summary of an elpd estimate; per-point values go to caller buffers.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct BnnElpd {
    pub total: f64,
    pub se: f64,
    pub p_eff: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BnnStatus {
    match e {
        Error::InvalidConfig(_) => BnnStatus::InvalidConfig,
        Error::InvalidArgument(_) => BnnStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => BnnStatus::DimensionMismatch,
        Error::MissingArtifact(_) => BnnStatus::MissingArtifact,
        Error::Parse { .. } | Error::Json(_) => BnnStatus::Parse,
        Error::Io(_) => BnnStatus::Io,
        e if e.is_numeric() => BnnStatus::Numeric,
        _ => BnnStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

/// Runs `f`, turning errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BnnStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            BnnStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            BnnStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, what: &'static str) -> Result<Array2<f64>, Fail> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::InvalidArgument(format!("{what}: {rows} x {cols} overflows")))?;
    let v = slice(p, len, what)?.to_vec();
    Ok(Array2::from_shape_vec((rows, cols), v).expect("length checked"))
}

unsafe fn string(p: *const c_char, what: &'static str) -> Result<String, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Fail::Core(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

fn check_len(what: &str, expected: usize, got: usize) -> Result<(), Fail> {
    if expected != got {
        return Err(Fail::Core(Error::DimensionMismatch {
            layer: what.into(),
            expected,
            got,
        }));
    }
    Ok(())
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn bnn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn bnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a network with `n_hidden` hidden layers of the given widths.
///
/// `activation` and `prior` take [`BnnActivation`] and [`BnnPrior`] values; any other
/// number is rejected with `InvalidArgument`.
///
/// # Safety
/// `widths` must point to `n_hidden` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bnn_model_new(
    input_dim: usize,
    widths: *const usize,
    n_hidden: usize,
    output_dim: usize,
    activation: u32,
    prior: u32,
    out: *mut *mut BnnModel,
) -> BnnStatus {
    guard(|| {
        if widths.is_null() && n_hidden > 0 {
            return Err(Fail::Null("widths"));
        }
        let widths = if n_hidden == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(widths, n_hidden).to_vec()
        };
        let activation = match activation {
            a if a == BnnActivation::Relu as u32 => Activation::Relu,
            a if a == BnnActivation::Sigmoid as u32 => Activation::Sigmoid,
            a => return Err(Error::InvalidArgument(format!("unknown activation code {a}")).into()),
        };
        let prior = match prior {
            p if p == BnnPrior::Gaussian as u32 => PriorFamily::Gaussian,
            p if p == BnnPrior::StudentT as u32 => PriorFamily::StudentT,
            p => return Err(Error::InvalidArgument(format!("unknown prior code {p}")).into()),
        };
        let config = NetworkConfig::new(input_dim, widths, output_dim, activation, prior)?;
        put(out, BnnModel(config))
    })
}

/// # Safety
/// `model` must come from [`bnn_model_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn bnn_model_free(model: *mut BnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Length of the flat parameter vector: every `W_l` then `b_l`, then `log sigma`. 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bnn_model_param_count(model: *const BnnModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.param_count())
}

/// Copies `n` rows of inputs (`n x input_dim`) and targets (`n x output_dim`).
///
/// # Safety
/// Buffers must hold the stated number of values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bnn_dataset_new(
    x: *const f64,
    n: usize,
    input_dim: usize,
    y: *const f64,
    output_dim: usize,
    out: *mut *mut BnnDataset,
) -> BnnStatus {
    guard(|| {
        let x = matrix(x, n, input_dim, "x")?;
        let y = matrix(y, n, output_dim, "y")?;
        put(out, BnnDataset(Dataset::new(x, y)?))
    })
}

/// # Safety
/// `data` must come from [`bnn_dataset_new`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn bnn_dataset_free(data: *mut BnnDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Unnormalised log posterior at `params`.
///
/// # Safety
/// Handles must be live, `params` must hold `len` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bnn_log_posterior(
    model: *const BnnModel,
    data: *const BnnDataset,
    params: *const f64,
    len: usize,
    out: *mut f64,
) -> BnnStatus {
    guard(|| {
        let (m, d) = (as_ref(model, "model")?, as_ref(data, "data")?);
        let p = ParamVector {
            values: slice(params, len, "params")?.to_vec(),
        };
        let v = log_posterior(&m.0, &p, &d.0)?;
        *out.as_mut().ok_or(Fail::Null("out"))? = v;
        Ok(())
    })
}

/// Gradient of the log posterior, written into `grad` (same length as `params`).
///
/// # Safety
/// Handles must be live and both buffers must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn bnn_grad_log_posterior(
    model: *const BnnModel,
    data: *const BnnDataset,
    params: *const f64,
    len: usize,
    grad: *mut f64,
) -> BnnStatus {
    guard(|| {
        let (m, d) = (as_ref(model, "model")?, as_ref(data, "data")?);
        let p = ParamVector {
            values: slice(params, len, "params")?.to_vec(),
        };
        let g = grad_log_posterior(&m.0, &p, &d.0)?;
        slice_mut(grad, len, "grad")?.copy_from_slice(&g.values);
        Ok(())
    })
}

unsafe fn fit(
    model: *const BnnModel,
    data: *const BnnDataset,
    recipe: InferenceRecipe,
    out: *mut *mut BnnDraws,
) -> Result<(), Fail> {
    let (m, d) = (as_ref(model, "model")?, as_ref(data, "data")?);
    let draws = fit_posterior(&m.0, &d.0, &recipe)?;
    put(out, BnnDraws(draws))
}

/// Mean-field ADVI followed by `posterior_draws` draws from the fitted approximation.
///
/// # Safety
/// Handles must be live and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bnn_fit_vi(
    model: *const BnnModel,
    data: *const BnnDataset,
    iterations: usize,
    learning_rate: f64,
    posterior_draws: usize,
    seed: u64,
    out: *mut *mut BnnDraws,
) -> BnnStatus {
    guard(|| {
        let config = ViConfig {
            iterations,
            learning_rate,
            seed,
            ..ViConfig::default()
        };
        config.validate()?;
        if posterior_draws == 0 {
            return Err(Error::InvalidArgument("posterior_draws must be at least 1".into()).into());
        }
        fit(model, data, InferenceRecipe::Vi { config, posterior_draws }, out)
    })
}

/// NUTS with dual-averaging warmup; `chains` chains run in parallel.
///
/// # Safety
/// Handles must be live and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bnn_fit_nuts(
    model: *const BnnModel,
    data: *const BnnDataset,
    warmup: usize,
    samples: usize,
    chains: usize,
    max_tree_depth: usize,
    seed: u64,
    out: *mut *mut BnnDraws,
) -> BnnStatus {
    guard(|| {
        let config = NutsConfig {
            warmup,
            samples,
            chains,
            max_tree_depth,
            seed,
            ..NutsConfig::default()
        };
        config.validate()?;
        fit(model, data, InferenceRecipe::Hmc(config), out)
    })
}

/// # Safety
/// `draws` must come from a fit call and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn bnn_draws_free(draws: *mut BnnDraws) {
    if !draws.is_null() {
        drop(Box::from_raw(draws));
    }
}

/// Number of draws and parameters.
///
/// # Safety
/// `draws` must be live and both outputs writable.
#[no_mangle]
pub unsafe extern "C" fn bnn_draws_shape(
    draws: *const BnnDraws,
    num_draws: *mut usize,
    num_params: *mut usize,
) -> BnnStatus {
    guard(|| {
        let d = as_ref(draws, "draws")?;
        *num_draws.as_mut().ok_or(Fail::Null("num_draws"))? = d.0.num_draws();
        *num_params.as_mut().ok_or(Fail::Null("num_params"))? = d.0.num_params();
        Ok(())
    })
}

/// Copies the draws row-major into `buf`, which must hold exactly `num_draws * num_params` values.
///
/// # Safety
/// `draws` must be live and `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn bnn_draws_copy(draws: *const BnnDraws, buf: *mut f64, len: usize) -> BnnStatus {
    guard(|| {
        let d = as_ref(draws, "draws")?;
        check_len("draw buffer", d.0.draws.len(), len)?;
        let out = slice_mut(buf, len, "buf")?;
        for (o, v) in out.iter_mut().zip(d.0.draws.iter()) {
            *o = *v;
        }
        Ok(())
    })
}

/// Posterior predictive mean and central `level` interval of the observations at `n` inputs.
///
/// Outputs hold `n * output_dim` values each; `lower` and `upper` may be null.
///
/// # Safety
/// Handles must be live and buffers must be sized as stated.
#[no_mangle]
pub unsafe extern "C" fn bnn_predict(
    model: *const BnnModel,
    draws: *const BnnDraws,
    x: *const f64,
    n: usize,
    level: f64,
    seed: u64,
    mean: *mut f64,
    lower: *mut f64,
    upper: *mut f64,
) -> BnnStatus {
    guard(|| {
        let (m, d) = (as_ref(model, "model")?, as_ref(draws, "draws")?);
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidArgument(format!("level {level} outside (0, 1)")).into());
        }
        let x = matrix(x, n, m.0.input_dim, "x")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = posterior_predictive(&d.0, &m.0, &x, &mut rng)?;
        let cols = pred.y_samples.ncols();
        slice_mut(mean, cols, "mean")?.copy_from_slice(&pred.predictive_mean());
        let tail = 0.5 * (1.0 - level);
        for (buf, q) in [(lower, tail), (upper, 1.0 - tail)] {
            if buf.is_null() {
                continue;
            }
            let out = slice_mut(buf, cols, "interval")?;
            for (o, col) in out.iter_mut().zip(pred.y_samples.columns()) {
                let mut v = col.to_vec();
                v.sort_by(f64::total_cmp);
                *o = bnn_core::stats::quantile_sorted(&v, q);
            }
        }
        Ok(())
    })
}

unsafe fn write_elpd(r: &ElpdResult, out: *mut BnnElpd, pointwise: *mut f64, khat: *mut f64) -> Result<(), Fail> {
    *out.as_mut().ok_or(Fail::Null("out"))? = BnnElpd {
        total: r.total,
        se: r.se,
        p_eff: r.p_eff,
    };
    let n = r.pointwise.len();
    if !pointwise.is_null() {
        slice_mut(pointwise, n, "pointwise")?.copy_from_slice(&r.pointwise);
    }
    if !khat.is_null() && !r.khat.is_empty() {
        slice_mut(khat, n, "khat")?.copy_from_slice(&r.khat);
    }
    Ok(())
}

/// PSIS-LOO from an `n x s` (points by draws) log-likelihood matrix.
///
/// `pointwise` and `khat` receive `n` values each and may be null.
///
/// # Safety
/// `loglik` must hold `n * s` values and non-null outputs must be sized as stated.
#[no_mangle]
pub unsafe extern "C" fn bnn_elpd_loo(
    loglik: *const f64,
    n: usize,
    s: usize,
    out: *mut BnnElpd,
    pointwise: *mut f64,
    khat: *mut f64,
) -> BnnStatus {
    guard(|| {
        let m = LogLikMatrix::new(matrix(loglik, n, s, "loglik")?, "ffi")?;
        write_elpd(&elpd_loo(&m)?, out, pointwise, khat)
    })
}

/// WAIC with the log-density variance penalty; `pointwise` may be null.
///
/// # Safety
/// `loglik` must hold `n * s` values and non-null outputs must be sized as stated.
#[no_mangle]
pub unsafe extern "C" fn bnn_elpd_waic(
    loglik: *const f64,
    n: usize,
    s: usize,
    out: *mut BnnElpd,
    pointwise: *mut f64,
) -> BnnStatus {
    guard(|| {
        let m = LogLikMatrix::new(matrix(loglik, n, s, "loglik")?, "ffi")?;
        write_elpd(&elpd_waic(&m, WaicPenalty::LogDensityVariance)?, out, pointwise, ptr::null_mut())
    })
}

/// Stacking weights from an `n x k` matrix of leave-one-out log densities.
///
/// # Safety
/// `log_dens` must hold `n * k` values and `weights` must hold `k`.
#[no_mangle]
pub unsafe extern "C" fn bnn_stacking_weights(
    log_dens: *const f64,
    n: usize,
    k: usize,
    weights: *mut f64,
) -> BnnStatus {
    guard(|| {
        let w = stacking_weights_log(&matrix(log_dens, n, k, "log_dens")?)?;
        slice_mut(weights, k, "weights")?.copy_from_slice(&w.w);
        Ok(())
    })
}

/// Pseudo-BMA weights from an `n x k` matrix of pointwise elpd values.
///
/// # Safety
/// `pointwise` must hold `n * k` values and `weights` must hold `k`.
#[no_mangle]
pub unsafe extern "C" fn bnn_pseudo_bma_weights(
    pointwise: *const f64,
    n: usize,
    k: usize,
    weights: *mut f64,
) -> BnnStatus {
    guard(|| {
        let m = matrix(pointwise, n, k, "pointwise")?;
        let elpds: Vec<ElpdResult> = m
            .columns()
            .into_iter()
            .enumerate()
            .map(|(i, c)| ElpdResult {
                model_id: format!("m{i}"),
                method: ElpdMethod::PsisLoo,
                total: c.sum(),
                se: 0.0,
                pointwise: c.to_vec(),
                khat: Vec::new(),
                p_eff: 0.0,
            })
            .collect();
        let w = pseudo_bma_weights(&elpds)?;
        slice_mut(weights, k, "weights")?.copy_from_slice(&w.w);
        Ok(())
    })
}

fn run_stages(spec: &ExperimentSpec, opts: &RunOptions) -> Result<(), Fail> {
    let reports = experiment::cmd_reproduce(spec, opts)?;
    let failures: Vec<String> = reports
        .iter()
        .flat_map(|r| r.failures.iter().map(move |(id, msg)| format!("{} {id}: {msg}", r.stage)))
        .collect();
    if !failures.is_empty() {
        return Err(Fail::Core(Error::NonFinite {
            quantity: format!("results in {} cell(s): {}", failures.len(), failures.join("; ")),
        }));
    }
    Ok(())
}

/// Runs a named bundle end to end into `out_dir`; `scale` multiplies iteration counts.
///
/// # Safety
/// Both strings must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn bnn_reproduce(name: *const c_char, out_dir: *const c_char, scale: f64, force: bool) -> BnnStatus {
    guard(|| {
        let spec = experiment::bundle_spec(&string(name, "name")?)?;
        let mut opts = RunOptions::new(PathBuf::from(string(out_dir, "out_dir")?));
        opts.scale = scale;
        opts.force = force;
        run_stages(&spec, &opts)
    })
}

/// Runs every stage of the experiment described by a TOML spec file.
///
/// # Safety
/// Both strings must be nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn bnn_run_spec(spec_path: *const c_char, out_dir: *const c_char, force: bool) -> BnnStatus {
    guard(|| {
        let spec = ExperimentSpec::from_file(&PathBuf::from(string(spec_path, "spec_path")?))?;
        let mut opts = RunOptions::new(PathBuf::from(string(out_dir, "out_dir")?));
        opts.force = force;
        run_stages(&spec, &opts)
    })
}
