//! C ABI over the attack library.
//!
//! Models and optimizers are opaque handles created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`DfoStatus`]; on failure, [`dfo_last_error_message`] describes
//! the last error raised on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dfo_attack::campaign::{run_attack, CampaignConfig};
use dfo_attack::dfo::{minimize, AskTell, MinimizeOptions, OptimizerKind};
use dfo_attack::models::{load_model, LinearModel, ModelOracle, RemoteModel};
use dfo_attack::objectives::{AttackMode, AttackSpec, ProblemForm};
use dfo_attack::tiling::TileGrid;
use dfo_attack::{Error, ImageTensor, LossKind, Shape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    InvalidGrid = 4,
    BudgetExhausted = 5,
    Oracle = 6,
    ModelFormat = 7,
    Io = 8,
    Training = 9,
    Config = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfoOptimizerKind {
    OpoCauchy = 0,
    OpoGauss = 1,
    Cma = 2,
    CmaDiag = 3,
    Random = 4,
    De = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfoForm {
    Continuous = 0,
    Discrete = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfoLoss {
    CrossEntropy = 0,
    CarliniWagner = 1,
}

/// Settings for [`dfo_attack_run`]. Start from [`dfo_attack_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DfoAttackConfig {
    pub optimizer: DfoOptimizerKind,
    pub form: DfoForm,
    pub loss: DfoLoss,
    pub epsilon: f64,
    pub n_tiles: usize,
    pub query_limit: u64,
    pub seed: u64,
    /// Non-zero for a targeted attack towards `target`.
    pub targeted: u8,
    pub target: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DfoAttackResult {
    pub initially_correct: u8,
    pub success: u8,
    pub queries_used: u64,
    /// Attack loss at the last query; NaN when no query was made.
    pub final_loss: f64,
}

/// Objective for [`dfo_minimize`]: receives `dimension` values and `user_data`.
pub type DfoObjective = Option<unsafe extern "C" fn(point: *const f64, dimension: usize, user_data: *mut c_void) -> f64>;

/// Opaque model handle.
pub struct DfoModel {
    inner: Box<dyn ModelOracle>,
}

/// Opaque ask/tell optimizer handle.
pub struct DfoOptimizer {
    inner: Box<dyn AskTell>,
    rng: ChaCha8Rng,
    batch: Vec<Vec<f64>>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(DfoStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidInput(_) => DfoStatus::InvalidArgument,
            Error::Shape { .. } => DfoStatus::ShapeMismatch,
            Error::InvalidGrid(_) => DfoStatus::InvalidGrid,
            Error::BudgetExhausted { .. } => DfoStatus::BudgetExhausted,
            Error::Oracle(_) => DfoStatus::Oracle,
            Error::Training(_) => DfoStatus::Training,
            Error::ModelFormat(_) => DfoStatus::ModelFormat,
            Error::Config(_) | Error::Csv(_) => DfoStatus::Config,
            Error::Io(_) => DfoStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DfoStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(DfoStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DfoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DfoStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            DfoStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn optimizer_kind(kind: DfoOptimizerKind) -> OptimizerKind {
    match kind {
        DfoOptimizerKind::OpoCauchy => OptimizerKind::OnePlusOneCauchy,
        DfoOptimizerKind::OpoGauss => OptimizerKind::OnePlusOneGaussian,
        DfoOptimizerKind::Cma => OptimizerKind::CmaFull,
        DfoOptimizerKind::CmaDiag => OptimizerKind::CmaDiagonal,
        DfoOptimizerKind::Random => OptimizerKind::RandomSearch,
        DfoOptimizerKind::De => OptimizerKind::DifferentialEvolution,
    }
}

/// Message for the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dfo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn dfo_status_name(status: DfoStatus) -> *const c_char {
    let name: &'static CStr = match status {
        DfoStatus::Ok => c"ok",
        DfoStatus::NullPointer => c"null pointer",
        DfoStatus::InvalidArgument => c"invalid argument",
        DfoStatus::ShapeMismatch => c"shape mismatch",
        DfoStatus::InvalidGrid => c"invalid tile grid",
        DfoStatus::BudgetExhausted => c"budget exhausted",
        DfoStatus::Oracle => c"oracle error",
        DfoStatus::ModelFormat => c"model format error",
        DfoStatus::Io => c"i/o error",
        DfoStatus::Training => c"training failed",
        DfoStatus::Config => c"configuration error",
        DfoStatus::Panic => c"internal panic",
    };
    name.as_ptr()
}

/// Loads a serialized model file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dfo_model_load(path: *const c_char, out: *mut *mut DfoModel) -> DfoStatus {
    guard(|| {
        let path = c_str(path, "path")?;
        let model = load_model(path)?;
        store(out, DfoModel { inner: Box::new(model) })
    })
}

/// Connects to a logits server (`host:port`, `http:host:port` or a URL).
///
/// # Safety
/// `endpoint` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dfo_model_connect(endpoint: *const c_char, out: *mut *mut DfoModel) -> DfoStatus {
    guard(|| {
        let endpoint = c_str(endpoint, "endpoint")?;
        let model = RemoteModel::connect(endpoint)?;
        store(out, DfoModel { inner: Box::new(model) })
    })
}

/// Builds a linear model. `weights` is `classes × (channels·height·width)`,
/// row-major; `bias` has `classes` entries.
///
/// # Safety
/// `weights` and `bias` must point to arrays of the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn dfo_model_linear_new(
    channels: usize,
    height: usize,
    width: usize,
    classes: usize,
    weights: *const f64,
    bias: *const f64,
    out: *mut *mut DfoModel,
) -> DfoStatus {
    guard(|| {
        let shape = Shape::new(channels, height, width);
        let n = shape.len().checked_mul(classes).ok_or_else(|| invalid("model too large"))?;
        let weights = slice(weights, n, "weights")?.to_vec();
        let bias = slice(bias, classes, "bias")?.to_vec();
        let model = LinearModel::new(shape, classes, weights, bias)?;
        store(out, DfoModel { inner: Box::new(model) })
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dfo_model_free(model: *mut DfoModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input shape and class count.
///
/// # Safety
/// `model` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn dfo_model_info(
    model: *const DfoModel,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
    classes: *mut usize,
) -> DfoStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if channels.is_null() || height.is_null() || width.is_null() || classes.is_null() {
            return Err(null("output"));
        }
        let shape = model.inner.input_shape();
        *channels = shape.channels;
        *height = shape.height;
        *width = shape.width;
        *classes = model.inner.classes();
        Ok(())
    })
}

/// Writes the logits of `image` (`image_len` values in `[0,1]`) into `out`.
///
/// # Safety
/// `image` must hold `image_len` values and `out` `out_len` writable slots.
#[no_mangle]
pub unsafe extern "C" fn dfo_model_logits(
    model: *const DfoModel,
    image: *const f64,
    image_len: usize,
    out: *mut f64,
    out_len: usize,
) -> DfoStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let shape = model.inner.input_shape();
        if image_len != shape.len() {
            return Err(Error::Shape { expected: shape.len(), actual: image_len }.into());
        }
        if out_len != model.inner.classes() {
            return Err(Error::Shape { expected: model.inner.classes(), actual: out_len }.into());
        }
        let x = ImageTensor::new(shape, slice(image, image_len, "image")?.to_vec())?;
        let logits = model.inner.logits(&x)?;
        slice_mut(out, out_len, "out")?.copy_from_slice(logits.values());
        Ok(())
    })
}

/// Creates an ask/tell optimizer. `mean` may be null for the origin.
///
/// # Safety
/// `mean`, when non-null, must hold `dimension` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dfo_optimizer_new(
    kind: DfoOptimizerKind,
    dimension: usize,
    mean: *const f64,
    sigma: f64,
    seed: u64,
    out: *mut *mut DfoOptimizer,
) -> DfoStatus {
    guard(|| {
        if dimension == 0 {
            return Err(invalid("dimension must be >= 1"));
        }
        let mean = if mean.is_null() { vec![0.0; dimension] } else { slice(mean, dimension, "mean")?.to_vec() };
        let inner = optimizer_kind(kind).build(mean, sigma)?;
        store(out, DfoOptimizer { inner, rng: ChaCha8Rng::seed_from_u64(seed), batch: Vec::new() })
    })
}

/// # Safety
/// `optimizer` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dfo_optimizer_free(optimizer: *mut DfoOptimizer) {
    if !optimizer.is_null() {
        drop(Box::from_raw(optimizer));
    }
}

/// Draws the next batch and stores its size in `count`. Read the points with
/// [`dfo_optimizer_candidate`], then report their values with
/// [`dfo_optimizer_tell`].
///
/// # Safety
/// `optimizer` must be a live handle; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dfo_optimizer_ask(optimizer: *mut DfoOptimizer, count: *mut usize) -> DfoStatus {
    guard(|| {
        let opt = optimizer.as_mut().ok_or_else(|| null("optimizer"))?;
        if count.is_null() {
            return Err(null("count"));
        }
        opt.batch = opt.inner.ask(&mut opt.rng);
        *count = opt.batch.len();
        Ok(())
    })
}

/// Copies candidate `index` of the current batch into `out`.
///
/// # Safety
/// `out` must have `len` writable slots.
#[no_mangle]
pub unsafe extern "C" fn dfo_optimizer_candidate(
    optimizer: *const DfoOptimizer,
    index: usize,
    out: *mut f64,
    len: usize,
) -> DfoStatus {
    guard(|| {
        let opt = optimizer.as_ref().ok_or_else(|| null("optimizer"))?;
        let point = opt.batch.get(index).ok_or_else(|| invalid(format!("no candidate {index} in the current batch")))?;
        if len != point.len() {
            return Err(Error::Shape { expected: point.len(), actual: len }.into());
        }
        slice_mut(out, len, "out")?.copy_from_slice(point);
        Ok(())
    })
}

/// Reports the objective values of the whole current batch.
///
/// # Safety
/// `values` must hold `count` values.
#[no_mangle]
pub unsafe extern "C" fn dfo_optimizer_tell(optimizer: *mut DfoOptimizer, values: *const f64, count: usize) -> DfoStatus {
    guard(|| {
        let opt = optimizer.as_mut().ok_or_else(|| null("optimizer"))?;
        if opt.batch.is_empty() {
            return Err(invalid("tell without a pending batch"));
        }
        let values = slice(values, count, "values")?;
        let batch = std::mem::take(&mut opt.batch);
        let told = opt.inner.tell(&batch, values);
        if told.is_err() {
            opt.batch = batch;
        }
        told?;
        Ok(())
    })
}

/// # Safety
/// `optimizer` must be a live handle; `sigma` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dfo_optimizer_sigma(optimizer: *const DfoOptimizer, sigma: *mut f64) -> DfoStatus {
    guard(|| {
        let opt = optimizer.as_ref().ok_or_else(|| null("optimizer"))?;
        if sigma.is_null() {
            return Err(null("sigma"));
        }
        *sigma = opt.inner.sigma();
        Ok(())
    })
}

/// Minimises `objective` with at most `budget` evaluations. `mean` may be
/// null for the origin. The best point goes to `best_point` (`dimension`
/// slots); `best_value` and `evaluations` may be null.
///
/// # Safety
/// `objective` must be safe to call with `user_data`; pointer arguments must
/// be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn dfo_minimize(
    kind: DfoOptimizerKind,
    dimension: usize,
    budget: u64,
    seed: u64,
    mean: *const f64,
    objective: DfoObjective,
    user_data: *mut c_void,
    best_point: *mut f64,
    best_value: *mut f64,
    evaluations: *mut u64,
) -> DfoStatus {
    guard(|| {
        let f = objective.ok_or_else(|| null("objective"))?;
        if dimension == 0 {
            return Err(invalid("dimension must be >= 1"));
        }
        let out = slice_mut(best_point, dimension, "best_point")?;
        let initial_mean = if mean.is_null() { None } else { Some(slice(mean, dimension, "mean")?.to_vec()) };
        let options = MinimizeOptions { initial_mean, ..MinimizeOptions::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outcome = minimize(
            |x: &[f64]| Ok::<f64, Error>(f(x.as_ptr(), x.len(), user_data)),
            optimizer_kind(kind),
            dimension,
            budget,
            |_| false,
            &mut rng,
            &options,
        )?;
        out.copy_from_slice(&outcome.best_point);
        if !best_value.is_null() {
            *best_value = outcome.best_value;
        }
        if !evaluations.is_null() {
            *evaluations = outcome.evaluations;
        }
        Ok(())
    })
}

/// Defaults: CMA, continuous form, cross-entropy, ε = 0.05, 50 tiles,
/// 10,000 queries, seed 0, untargeted.
#[no_mangle]
pub extern "C" fn dfo_attack_config_default() -> DfoAttackConfig {
    let d = CampaignConfig::default();
    DfoAttackConfig {
        optimizer: DfoOptimizerKind::Cma,
        form: DfoForm::Continuous,
        loss: DfoLoss::CrossEntropy,
        epsilon: d.epsilon,
        n_tiles: d.n_tiles,
        query_limit: d.query_limit,
        seed: d.seed,
        targeted: 0,
        target: 0,
    }
}

/// Attacks one image whose true class is `label`.
///
/// # Safety
/// `image` must hold `image_len` values; `config` and `result` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dfo_attack_run(
    model: *const DfoModel,
    image: *const f64,
    image_len: usize,
    label: usize,
    config: *const DfoAttackConfig,
    result: *mut DfoAttackResult,
) -> DfoStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let c = *config.as_ref().ok_or_else(|| null("config"))?;
        let result = result.as_mut().ok_or_else(|| null("result"))?;
        let shape = model.inner.input_shape();
        if image_len != shape.len() {
            return Err(Error::Shape { expected: shape.len(), actual: image_len }.into());
        }
        if label >= model.inner.classes() || (c.targeted != 0 && c.target >= model.inner.classes()) {
            return Err(invalid("label out of range"));
        }
        let campaign = CampaignConfig {
            optimizer: optimizer_kind(c.optimizer),
            form: match c.form {
                DfoForm::Continuous => ProblemForm::Continuous,
                DfoForm::Discrete => ProblemForm::Discrete,
            },
            loss: match c.loss {
                DfoLoss::CrossEntropy => LossKind::CrossEntropy,
                DfoLoss::CarliniWagner => LossKind::CarliniWagner,
            },
            epsilon: c.epsilon,
            n_tiles: c.n_tiles,
            query_limit: c.query_limit,
            seed: c.seed,
            ..CampaignConfig::default()
        };
        campaign.validate()?;
        let x = ImageTensor::new(shape, slice(image, image_len, "image")?.to_vec())?;
        let mode = if c.targeted != 0 { AttackMode::Targeted { target: c.target } } else { AttackMode::Untargeted };
        let grid = TileGrid::new(shape, c.n_tiles)?;
        let spec = AttackSpec::new(x, label, mode, c.epsilon, campaign.loss, grid)?;
        let r = run_attack(&campaign, 0, &spec, model.inner.as_ref());
        *result = DfoAttackResult {
            initially_correct: r.initially_correct as u8,
            success: r.success as u8,
            queries_used: r.queries_used,
            final_loss: r.final_loss.unwrap_or(f64::NAN),
        };
        match r.error {
            Some(message) => Err(Failure(DfoStatus::Oracle, message)),
            None => Ok(()),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_map_to_statuses() {
        let cases = [
            (Error::InvalidInput("x".into()), DfoStatus::InvalidArgument),
            (Error::Shape { expected: 2, actual: 3 }, DfoStatus::ShapeMismatch),
            (Error::ModelFormat("bad".into()), DfoStatus::ModelFormat),
        ];
        for (e, status) in cases {
            let Failure(got, message) = Failure::from(e);
            assert_eq!(got, status);
            assert!(!message.is_empty());
        }
    }

    #[test]
    fn guard_records_last_error_and_catches_panics() {
        assert_eq!(guard(|| Ok(())), DfoStatus::Ok);
        assert_eq!(guard(|| Err(invalid("nope"))), DfoStatus::InvalidArgument);
        let msg = unsafe { CStr::from_ptr(dfo_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "nope");
        let previous = std::panic::take_hook();
        std::panic::set_hook(Box::new(|_| {}));
        let status = guard(|| panic!("boom"));
        std::panic::set_hook(previous);
        assert_eq!(status, DfoStatus::Panic);
    }

    #[test]
    fn interior_nul_is_replaced() {
        set_last_error("a\0b".into());
        let msg = unsafe { CStr::from_ptr(dfo_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "a b");
    }
}
