//! C ABI for loading, saving and evaluating trained models.
//!
//! Every function returns a [`TcaStatus`]. On failure the message is kept in
//! thread-local storage and can be read with [`tca_last_error`]. Models are
//! opaque handles created by `*_load`/`*_new` and released by `*_free`.
//! Arrays are row-major `double` buffers whose lengths are passed explicitly.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::{ArrayView1, ArrayView2};
use tca::autoenc::AeModel;
use tca::data::persist::{load_model, save_model};
use tca::dbn::DbnModel;
use tca::rbm::RbmModel;
use tca::{BaseKind, Error, TcaParams};

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Format = 5,
    TrainingFailure = 6,
    Panic = 7,
}

/// Base unit family.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcaBase {
    Sigmoid = 0,
    Ted = 1,
    Linear = 2,
}

impl From<TcaBase> for BaseKind {
    fn from(b: TcaBase) -> Self {
        match b {
            TcaBase::Sigmoid => BaseKind::SigmoidBernoulli,
            TcaBase::Ted => BaseKind::Ted,
            TcaBase::Linear => BaseKind::LinearGaussian,
        }
    }
}

/// A trainable compound activation layer.
pub struct TcaActivation(TcaParams);
/// A restricted Boltzmann machine with TCA hidden units.
pub struct TcaRbm(RbmModel);
/// A deep belief network with a labelled top layer.
pub struct TcaDbn(DbnModel);
/// A dense auto-encoder.
pub struct TcaAutoencoder(AeModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TcaStatus {
    match e {
        Error::InvalidArgument(_) => TcaStatus::InvalidArgument,
        Error::Shape { .. } => TcaStatus::ShapeMismatch,
        Error::TrainingFailure { .. } => TcaStatus::TrainingFailure,
        Error::Io { .. } => TcaStatus::Io,
        Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::CountMismatch { .. }
        | Error::Version(_)
        | Error::Schema(_) => TcaStatus::Format,
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TcaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TcaStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            TcaStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TcaStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return if len == 0 {
            Ok(&[])
        } else {
            Err(Failure::Null(what))
        };
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn output<'a>(
    p: *mut f64,
    len: usize,
    what: &'static str,
) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return if len == 0 {
            Ok(&mut [])
        } else {
            Err(Failure::Null(what))
        };
    }
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Error::InvalidArgument("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut T, v: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    unsafe { out.write(v) };
    Ok(())
}

unsafe fn put_handle<T>(out: *mut *mut T, v: T) -> Result<(), Failure> {
    unsafe { put(out, Box::into_raw(Box::new(v)), "out handle") }
}

fn copy_into(dst: &mut [f64], src: impl IntoIterator<Item = f64>) -> Result<(), Failure> {
    let src: Vec<f64> = src.into_iter().collect();
    if src.len() != dst.len() {
        return Err(Error::Shape {
            what: "output buffer",
            expected: src.len(),
            got: dst.len(),
        }
        .into());
    }
    dst.copy_from_slice(&src);
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn tca_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Mean of the base generating distribution at natural parameter `u`.
///
/// # Safety
/// `out` must be a valid pointer to one `double`.
#[no_mangle]
pub unsafe extern "C" fn tca_base_mean(base: TcaBase, u: f64, out: *mut f64) -> TcaStatus {
    guard(|| unsafe { put(out, BaseKind::from(base).mean(u), "out") })
}

/// Derivative of the base activation at `u`.
///
/// # Safety
/// `out` must be a valid pointer to one `double`.
#[no_mangle]
pub unsafe extern "C" fn tca_base_deriv(base: TcaBase, u: f64, out: *mut f64) -> TcaStatus {
    guard(|| unsafe { put(out, BaseKind::from(base).deriv(u), "out") })
}

// --------------------------------------------------------------------------
// TCA layer

/// A layer whose every unit equals the base activation.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn tca_activation_identity(
    base: TcaBase,
    units: usize,
    components: usize,
    out: *mut *mut TcaActivation,
) -> TcaStatus {
    guard(|| {
        let p = TcaParams::identity(base.into(), units, components)?;
        unsafe { put_handle(out, TcaActivation(p)) }
    })
}

/// A layer from row-major `units x components` log-scale and bias matrices.
///
/// # Safety
/// `log_scale` and `bias` must each hold `units * components` doubles and
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn tca_activation_new(
    base: TcaBase,
    units: usize,
    components: usize,
    log_scale: *const f64,
    bias: *const f64,
    out: *mut *mut TcaActivation,
) -> TcaStatus {
    guard(|| {
        let len = units
            .checked_mul(components)
            .ok_or_else(|| Error::InvalidArgument("layer size overflows".into()))?;
        let a = unsafe { input(log_scale, len, "log_scale") }?;
        let b = unsafe { input(bias, len, "bias") }?;
        let shape = (units, components);
        let to_matrix = |v: &[f64]| {
            ArrayView2::from_shape(shape, v)
                .map(|m| m.to_owned())
                .map_err(|e| Error::InvalidArgument(e.to_string()))
        };
        let p = TcaParams::new(base.into(), to_matrix(a)?, to_matrix(b)?)?;
        unsafe { put_handle(out, TcaActivation(p)) }
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn tca_activation_load(
    path: *const c_char,
    out: *mut *mut TcaActivation,
) -> TcaStatus {
    guard(|| {
        let p: TcaParams = load_model(unsafe { self::path(path) }?)?;
        unsafe { put_handle(out, TcaActivation(p)) }
    })
}

/// # Safety
/// `handle` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tca_activation_save(
    handle: *const TcaActivation,
    path: *const c_char,
) -> TcaStatus {
    guard(|| {
        let h = unsafe { self::handle(handle, "handle") }?;
        Ok(save_model(unsafe { self::path(path) }?, &h.0)?)
    })
}

/// # Safety
/// `handle` must come from this library (or be NULL) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tca_activation_free(handle: *mut TcaActivation) {
    unsafe { free(handle) }
}

/// # Safety
/// `handle` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tca_activation_units(
    handle: *const TcaActivation,
    out: *mut usize,
) -> TcaStatus {
    guard(|| {
        let h = unsafe { self::handle(handle, "handle") }?;
        unsafe { put(out, h.0.units(), "out") }
    })
}

/// # Safety
/// `handle` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tca_activation_components(
    handle: *const TcaActivation,
    out: *mut usize,
) -> TcaStatus {
    guard(|| {
        let h = unsafe { self::handle(handle, "handle") }?;
        unsafe { put(out, h.0.components(), "out") }
    })
}

/// Evaluate the layer on `len` pre-activations (one per unit).
///
/// # Safety
/// `x` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tca_activation_eval(
    handle: *const TcaActivation,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> TcaStatus {
    guard(|| {
        let h = unsafe { self::handle(handle, "handle") }?;
        let x = unsafe { input(x, len, "x") }?;
        let out = unsafe { output(out, len, "out") }?;
        copy_into(out, h.0.eval(ArrayView1::from(x))?)
    })
}

/// Derivative of the layer at `len` pre-activations.
///
/// # Safety
/// `x` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tca_activation_deriv(
    handle: *const TcaActivation,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> TcaStatus {
    guard(|| {
        let h = unsafe { self::handle(handle, "handle") }?;
        let x = unsafe { input(x, len, "x") }?;
        let out = unsafe { output(out, len, "out") }?;
        copy_into(out, h.0.deriv(ArrayView1::from(x))?)
    })
}

// --------------------------------------------------------------------------
// RBM

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn tca_rbm_load(path: *const c_char, out: *mut *mut TcaRbm) -> TcaStatus {
    guard(|| {
        let m: RbmModel = load_model(unsafe { self::path(path) }?)?;
        unsafe { put_handle(out, TcaRbm(m)) }
    })
}

/// # Safety
/// `handle` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tca_rbm_save(handle: *const TcaRbm, path: *const c_char) -> TcaStatus {
    guard(|| {
        let h = unsafe { self::handle(handle, "handle") }?;
        Ok(save_model(unsafe { self::path(path) }?, &h.0)?)
    })
}

/// # Safety
/// `handle` must come from this library (or be NULL) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tca_rbm_free(handle: *mut TcaRbm) {
    unsafe { free(handle) }
}

/// # Safety
/// `handle` must come from this library; both out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tca_rbm_dims(
    handle: *const TcaRbm,
    visible: *mut usize,
    hidden: *mut usize,
) -> TcaStatus {
    guard(|| {
        let h = unsafe { self::handle(handle, "handle") }?;
        unsafe { put(visible, h.0.visible_dim(), "visible") }?;
        unsafe { put(hidden, h.0.hidden_dim(), "hidden") }
    })
}

/// Free energy of one visible vector.
///
/// # Safety
/// `x` must hold `len` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tca_rbm_free_energy(
    handle: *const TcaRbm,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> TcaStatus {
    guard(|| {
        let h = unsafe { self::handle(handle, "handle") }?;
        let x = unsafe { input(x, len, "x") }?;
        let fe = h.0.free_energy(ArrayView1::from(x))?;
        unsafe { put(out, fe, "out") }
    })
}

/// Mean hidden activation for one visible vector.
///
/// # Safety
/// `x` must hold `visible_len` doubles and `out` `hidden_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tca_rbm_hidden_mean(
    handle: *const TcaRbm,
    x: *const f64,
    visible_len: usize,
    out: *mut f64,
    hidden_len: usize,
) -> TcaStatus {
    guard(|| {
        let h = unsafe { self::handle(handle, "handle") }?;
        let x = unsafe { input(x, visible_len, "x") }?;
        let out = unsafe { output(out, hidden_len, "out") }?;
        let field = h.0.forward_field(ArrayView1::from(x))?;
        copy_into(out, h.0.hidden().eval(field.view())?)
    })
}

// --------------------------------------------------------------------------
// DBN

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn tca_dbn_load(path: *const c_char, out: *mut *mut TcaDbn) -> TcaStatus {
    guard(|| {
        let m: DbnModel = load_model(unsafe { self::path(path) }?)?;
        unsafe { put_handle(out, TcaDbn(m)) }
    })
}

/// # Safety
/// `handle` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tca_dbn_save(handle: *const TcaDbn, path: *const c_char) -> TcaStatus {
    guard(|| {
        let h = unsafe { self::handle(handle, "handle") }?;
        Ok(save_model(unsafe { self::path(path) }?, &h.0)?)
    })
}

/// # Safety
/// `handle` must come from this library (or be NULL) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tca_dbn_free(handle: *mut TcaDbn) {
    unsafe { free(handle) }
}

/// Input dimension and number of classes.
///
/// # Safety
/// `handle` must come from this library; both out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tca_dbn_dims(
    handle: *const TcaDbn,
    input_dim: *mut usize,
    classes: *mut usize,
) -> TcaStatus {
    guard(|| {
        let h = unsafe { self::handle(handle, "handle") }?;
        unsafe { put(input_dim, h.0.input_dim(), "input_dim") }?;
        unsafe { put(classes, h.0.classes().len(), "classes") }
    })
}

/// Classify `rows` row-major images of `cols` pixels; writes one digit label per row.
///
/// # Safety
/// `x` must hold `rows * cols` doubles and `labels` `rows` bytes.
#[no_mangle]
pub unsafe extern "C" fn tca_dbn_classify(
    handle: *const TcaDbn,
    x: *const f64,
    rows: usize,
    cols: usize,
    labels: *mut u8,
) -> TcaStatus {
    guard(|| {
        let h = unsafe { self::handle(handle, "handle") }?;
        let x = unsafe { input(x, rows * cols, "x") }?;
        if labels.is_null() && rows > 0 {
            return Err(Failure::Null("labels"));
        }
        let x = ArrayView2::from_shape((rows, cols), x)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let classes = h.0.classes();
        for (r, k) in h.0.classify_batch(x)?.into_iter().enumerate() {
            unsafe { labels.add(r).write(classes[k]) };
        }
        Ok(())
    })
}

// --------------------------------------------------------------------------
// auto-encoder

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn tca_autoencoder_load(
    path: *const c_char,
    out: *mut *mut TcaAutoencoder,
) -> TcaStatus {
    guard(|| {
        let m: AeModel = load_model(unsafe { self::path(path) }?)?;
        unsafe { put_handle(out, TcaAutoencoder(m)) }
    })
}

/// # Safety
/// `handle` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tca_autoencoder_save(
    handle: *const TcaAutoencoder,
    path: *const c_char,
) -> TcaStatus {
    guard(|| {
        let h = unsafe { self::handle(handle, "handle") }?;
        Ok(save_model(unsafe { self::path(path) }?, &h.0)?)
    })
}

/// # Safety
/// `handle` must come from this library (or be NULL) and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tca_autoencoder_free(handle: *mut TcaAutoencoder) {
    unsafe { free(handle) }
}

/// # Safety
/// `handle` must come from this library; both out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tca_autoencoder_dims(
    handle: *const TcaAutoencoder,
    input_dim: *mut usize,
    output_dim: *mut usize,
) -> TcaStatus {
    guard(|| {
        let h = unsafe { self::handle(handle, "handle") }?;
        unsafe { put(input_dim, h.0.input_dim(), "input_dim") }?;
        unsafe { put(output_dim, h.0.output_dim(), "output_dim") }
    })
}

/// Reconstruct `rows` row-major inputs of `cols` values into `out`
/// (`rows * output_dim` doubles).
///
/// # Safety
/// `x` must hold `rows * cols` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tca_autoencoder_reconstruct(
    handle: *const TcaAutoencoder,
    x: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    out_len: usize,
) -> TcaStatus {
    guard(|| {
        let h = unsafe { self::handle(handle, "handle") }?;
        let x = unsafe { input(x, rows * cols, "x") }?;
        let out = unsafe { output(out, out_len, "out") }?;
        let x = ArrayView2::from_shape((rows, cols), x)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        copy_into(out, h.0.reconstruct(x)?)
    })
}
