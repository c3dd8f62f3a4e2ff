//! C ABI over the fairtriage core.
//!
//! Every fallible call returns an [`FtStatus`]; on failure the message is
//! available from [`ft_last_error_message`] on the same thread. Models and
//! schemas are opaque handles released with their `_free` function. Label
//! arrays are `uint8_t`, nonzero meaning positive. Matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fairtriage::evaluation::{roc_auc, tune_threshold, ThresholdPolicy};
use fairtriage::fairness::{normal_cdf, two_proportion_ztest};
use fairtriage::models::{fit, FittedModel, ModelSpec};
use fairtriage::schema::{load_schema, FeatureSchema};
use fairtriage::{Error, Matrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    LengthMismatch = 5,
    SingleClass = 6,
    NonFinite = 7,
    Panic = 99,
}

/// Result of a two-proportion z-test.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FtZTest {
    pub z_abs: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Opaque fitted model.
pub struct FtModel(FittedModel);

/// Opaque feature schema.
pub struct FtSchema(FeatureSchema);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FtStatus {
    match e {
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) | Error::UnknownTargetLevel(_) => FtStatus::Parse,
        Error::Io { .. } => FtStatus::Io,
        Error::LengthMismatch { .. } | Error::ColumnMismatch { .. } => FtStatus::LengthMismatch,
        Error::SingleClass => FtStatus::SingleClass,
        Error::NonFinite { .. } => FtStatus::NonFinite,
        _ => FtStatus::InvalidArgument,
    }
}

/// Run `f`, recording the error message and mapping panics to `Panic`.
fn guard(f: impl FnOnce() -> Result<(), (FtStatus, String)>) -> FtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FtStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FtStatus::Panic
        }
    }
}

fn lift<T>(r: fairtriage::Result<T>) -> Result<T, (FtStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (FtStatus, String) {
    (FtStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or point to `n` readable elements.
unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (FtStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// # Safety
/// `p` must be null or a NUL-terminated string.
unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, (FtStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (FtStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn labels(y: &[u8]) -> Vec<bool> {
    y.iter().map(|&v| v != 0).collect()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ft_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ft_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Standard normal CDF.
#[no_mangle]
pub extern "C" fn ft_normal_cdf(x: f64) -> f64 {
    normal_cdf(x)
}

/// Two-proportion z-test with unpooled variance.
///
/// # Safety
/// `out` must be a valid pointer or null.
#[no_mangle]
pub unsafe extern "C" fn ft_ztest(p1: f64, n1: usize, p2: f64, n2: usize, alpha: f64, out: *mut FtZTest) -> FtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let r = lift(two_proportion_ztest(p1, n1, p2, n2, alpha))?;
        *out = FtZTest {
            z_abs: r.z_abs,
            p_value: r.p_value,
            significant: r.significant,
        };
        Ok(())
    })
}

/// Area under the ROC curve.
///
/// # Safety
/// `y` and `scores` must hold `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ft_auc(y: *const u8, scores: *const f64, n: usize, out: *mut f64) -> FtStatus {
    guard(|| {
        let (y, s) = (slice(y, n, "y")?, slice(scores, n, "scores")?);
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lift(roc_auc(&labels(y), s))?;
        Ok(())
    })
}

/// Observed score maximising F1 (ties to the lowest threshold).
///
/// # Safety
/// `y` and `scores` must hold `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ft_select_threshold_f1(y: *const u8, scores: *const f64, n: usize, out: *mut f64) -> FtStatus {
    guard(|| {
        let (y, s) = (slice(y, n, "y")?, slice(scores, n, "scores")?);
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lift(tune_threshold(&labels(y), s, ThresholdPolicy::F1Max))?;
        Ok(())
    })
}

/// Fit a model described by `spec_json` (e.g. `{"kind":"logistic_regression"}`).
/// `weights` may be null for unit weights.
///
/// # Safety
/// `x` must hold `rows * cols` values, `y` and non-null `weights` `rows`
/// values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ft_model_fit(
    spec_json: *const c_char,
    x: *const f64,
    rows: usize,
    cols: usize,
    y: *const u8,
    weights: *const f64,
    out: *mut *mut FtModel,
) -> FtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let spec: ModelSpec = serde_json::from_str(string(spec_json, "spec_json")?)
            .map_err(|e| (FtStatus::Parse, format!("model spec: {e}")))?;
        let len = rows
            .checked_mul(cols)
            .ok_or((FtStatus::InvalidArgument, "rows * cols overflows".to_string()))?;
        let x = lift(Matrix::from_vec(rows, cols, slice(x, len, "x")?.to_vec()))?;
        let y = labels(slice(y, rows, "y")?);
        let w = if weights.is_null() {
            None
        } else {
            Some(slice(weights, rows, "weights")?)
        };
        let model = lift(fit(&spec, &x, &y, w))?;
        *out = Box::into_raw(Box::new(FtModel(model)));
        Ok(())
    })
}

/// Load a model saved by the command line tool.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ft_model_load(path: *const c_char, out: *mut *mut FtModel) -> FtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = lift(FittedModel::load(string(path, "path")?))?;
        *out = Box::into_raw(Box::new(FtModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ft_model_save(model: *const FtModel, path: *const c_char) -> FtStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        lift(m.0.save(string(path, "path")?))
    })
}

/// Number of input columns the model expects.
///
/// # Safety
/// `model` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ft_model_n_features(model: *const FtModel, out: *mut usize) -> FtStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.0.n_features;
        Ok(())
    })
}

/// Positive-class probabilities for `rows` records into `out`.
///
/// # Safety
/// `x` must hold `rows * cols` values and `out` room for `rows`.
#[no_mangle]
pub unsafe extern "C" fn ft_model_predict_proba(
    model: *const FtModel,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> FtStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let len = rows
            .checked_mul(cols)
            .ok_or((FtStatus::InvalidArgument, "rows * cols overflows".to_string()))?;
        let x = lift(Matrix::from_vec(rows, cols, slice(x, len, "x")?.to_vec()))?;
        let p = lift(m.0.predict_proba(&x))?;
        if rows > 0 {
            if out.is_null() {
                return Err(null("out"));
            }
            std::slice::from_raw_parts_mut(out, rows).copy_from_slice(&p);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ft_model_free(model: *mut FtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Load a feature schema JSON file; a null `path` gives the bundled schema.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ft_schema_load(path: *const c_char, out: *mut *mut FtSchema) -> FtStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let schema = if path.is_null() {
            FeatureSchema::lcc()
        } else {
            lift(load_schema(string(path, "path")?))?
        };
        *out = Box::into_raw(Box::new(FtSchema(schema)));
        Ok(())
    })
}

/// # Safety
/// `schema` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ft_schema_feature_count(schema: *const FtSchema, out: *mut usize) -> FtStatus {
    guard(|| {
        let s = schema.as_ref().ok_or_else(|| null("schema"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = s.0.len();
        Ok(())
    })
}

/// # Safety
/// `schema` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ft_schema_free(schema: *mut FtSchema) {
    if !schema.is_null() {
        drop(Box::from_raw(schema));
    }
}
