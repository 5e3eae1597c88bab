//! C ABI over the `active-subspace` library.
//!
//! Every object is an opaque heap handle created by an `as_*_new*` function
//! and released by the matching `as_*_free`. Fallible calls return an
//! [`AsStatus`]; on failure a message is available from
//! [`as_last_error_message`] on the same thread.
//!
//! Fields cross the boundary as flat `double` arrays of grid values in
//! row-major order (`x` fastest), of length [`as_space_len`].

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use active_subspace::asm::{collect_gradients, eigendecompose, write_estimate, SubspaceEstimate};
use active_subspace::functionals::{
    linear_functional, poisson_control, quadratic_functional, Functional, PoissonControlProblem,
};
use active_subspace::hilbert::{Field, FunctionSpace, Space};
use active_subspace::randfield::{separable_sine_measure, GaussianMeasure};
use active_subspace::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A parameter or buffer length was rejected.
    InvalidArgument = 2,
    /// Objects built on different function spaces were combined.
    SpaceMismatch = 3,
    /// A solver, eigenproblem or user callback failed.
    Numerical = 4,
    /// Reading or writing a file failed.
    Io = 5,
    /// An internal panic was caught at the boundary.
    Panic = 6,
}

/// User functional. Must write `f(u)` to `*value` and, when `gradient` is
/// not null, the `L²` gradient representer (`len` grid values) to
/// `gradient`. Return 0 on success, anything else on failure.
///
/// The callback may be invoked concurrently from several threads.
pub type AsEvaluateFn = Option<
    unsafe extern "C" fn(user_data: *mut c_void, u: *const f64, len: usize, value: *mut f64, gradient: *mut f64) -> i32,
>;

/// Discretized `L²` space on a uniform grid.
pub struct AsSpace {
    inner: Space,
}

/// Gaussian measure with a Karhunen-Loeve expansion.
pub struct AsMeasure {
    inner: GaussianMeasure,
}

/// Differentiable functional on a space.
pub struct AsFunctional {
    inner: Box<dyn Functional>,
}

/// Estimated active subspace.
pub struct AsEstimate {
    inner: SubspaceEstimate,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn as_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn as_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

struct Failure(AsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::SpaceMismatch => AsStatus::SpaceMismatch,
            Error::LengthMismatch { .. }
            | Error::InvalidParameter { .. }
            | Error::NonTraceClass { .. }
            | Error::RankTooSmall { .. }
            | Error::NotUnit { .. }
            | Error::NonFinite { .. }
            | Error::EmptyTrainingSet => AsStatus::InvalidArgument,
            Error::Io(_) | Error::Json(_) => AsStatus::Io,
            _ => AsStatus::Numerical,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(AsStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(AsStatus::InvalidArgument, msg.into())
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> AsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => AsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            AsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn read_field(space: &Space, data: *const f64, len: usize) -> Result<Field, Failure> {
    if data.is_null() {
        return Err(null("field data"));
    }
    if len != space.len() {
        return Err(invalid(format!(
            "field length {len} does not match space size {}",
            space.len()
        )));
    }
    Ok(Field::from_values(space, slice::from_raw_parts(data, len).to_vec())?)
}

unsafe fn write_buffer(src: &[f64], out: *mut f64, len: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len < src.len() {
        return Err(invalid(format!("buffer holds {len} values, {} needed", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    let s = deref(p, what)?;
    let s = CStr::from_ptr(s)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

// ---- space ----

/// Trapezoid-weighted `L²` on an `nx × ny` grid over the unit square.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn as_space_new_unit_square(nx: usize, ny: usize, out: *mut *mut AsSpace) -> AsStatus {
    guard(|| {
        let space = FunctionSpace::unit_square(nx, ny)?;
        store(
            out,
            AsSpace {
                inner: Space::new(space),
            },
        )
    })
}

/// Number of grid nodes, or 0 for a null handle.
///
/// # Safety
/// `space` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn as_space_len(space: *const AsSpace) -> usize {
    space.as_ref().map_or(0, |s| s.inner.len())
}

/// `⟨u, v⟩` under the trapezoid weights.
///
/// # Safety
/// `u` and `v` must point to `len` values, `result` to one.
#[no_mangle]
pub unsafe extern "C" fn as_space_inner_product(
    space: *const AsSpace,
    u: *const f64,
    v: *const f64,
    len: usize,
    result: *mut f64,
) -> AsStatus {
    guard(|| {
        let space = &deref(space, "space")?.inner;
        let u = read_field(space, u, len)?;
        let v = read_field(space, v, len)?;
        let ip = active_subspace::hilbert::inner_product(&u, &v)?;
        write_buffer(&[ip], result, 1)
    })
}

/// # Safety
/// `space` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn as_space_free(space: *mut AsSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

// ---- measure ----

/// Zero-mean Gaussian measure with KL modes `sin(iπx) sin(jπy)` and
/// eigenvalues `amplitude · (i² + j²)^(−decay)`, `1 ≤ i, j ≤ m_per_axis`.
///
/// # Safety
/// `space` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn as_measure_new_separable_sine(
    space: *const AsSpace,
    m_per_axis: usize,
    decay: f64,
    amplitude: f64,
    out: *mut *mut AsMeasure,
) -> AsStatus {
    guard(|| {
        let space = &deref(space, "space")?.inner;
        let measure = separable_sine_measure(space, m_per_axis, decay, amplitude)?;
        store(out, AsMeasure { inner: measure })
    })
}

/// Number of KL modes, or 0 for a null handle.
///
/// # Safety
/// `measure` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn as_measure_modes(measure: *const AsMeasure) -> usize {
    measure.as_ref().map_or(0, |m| m.inner.modes())
}

/// Draws sample `index` of the stream `seed` into `out`.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn as_measure_sample(
    measure: *const AsMeasure,
    seed: u64,
    index: u64,
    out: *mut f64,
    len: usize,
) -> AsStatus {
    guard(|| {
        let measure = &deref(measure, "measure")?.inner;
        let u = measure.sample_one(seed, index);
        write_buffer(u.values(), out, len)
    })
}

/// # Safety
/// `measure` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn as_measure_free(measure: *mut AsMeasure) {
    if !measure.is_null() {
        drop(Box::from_raw(measure));
    }
}

// ---- functionals ----

/// `f(u) = ⟨u, h1⟩ + ⟨u, h2⟩`.
///
/// # Safety
/// `h1` and `h2` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn as_functional_new_linear(
    space: *const AsSpace,
    h1: *const f64,
    h2: *const f64,
    len: usize,
    out: *mut *mut AsFunctional,
) -> AsStatus {
    guard(|| {
        let space = &deref(space, "space")?.inner;
        let f = linear_functional(read_field(space, h1, len)?, read_field(space, h2, len)?)?;
        store(out, AsFunctional { inner: Box::new(f) })
    })
}

/// `f(u) = ½ Σ a_k ⟨u, φ_{m_k}⟩²` over KL modes of `measure` (0-based
/// indices `modes`, coefficients `coeffs`, both of length `n`).
///
/// # Safety
/// `modes` and `coeffs` must point to `n` values.
#[no_mangle]
pub unsafe extern "C" fn as_functional_new_quadratic(
    measure: *const AsMeasure,
    modes: *const usize,
    coeffs: *const f64,
    n: usize,
    out: *mut *mut AsFunctional,
) -> AsStatus {
    guard(|| {
        let measure = &deref(measure, "measure")?.inner;
        if modes.is_null() || coeffs.is_null() {
            return Err(null("modes or coeffs"));
        }
        let basis = measure.kl_functions().basis();
        let modes = slice::from_raw_parts(modes, n);
        let coeffs = slice::from_raw_parts(coeffs, n);
        let mut pairs = Vec::with_capacity(n);
        for (&m, &a) in modes.iter().zip(coeffs) {
            let phi = basis
                .get(m)
                .ok_or_else(|| invalid(format!("KL mode {m} out of range (measure has {})", basis.len())))?;
            pairs.push((phi.clone(), a));
        }
        let f = quadratic_functional(pairs)?;
        store(out, AsFunctional { inner: Box::new(f) })
    })
}

/// Reduced cost of the distributed Poisson control problem with
/// regularization `alpha`.
///
/// # Safety
/// `space` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn as_functional_new_poisson(
    space: *const AsSpace,
    alpha: f64,
    out: *mut *mut AsFunctional,
) -> AsStatus {
    guard(|| {
        let space = &deref(space, "space")?.inner;
        let f = poisson_control(PoissonControlProblem::new(space).with_alpha(alpha))?;
        store(out, AsFunctional { inner: Box::new(f) })
    })
}

struct UserData(*mut c_void);

// The caller promises the callback is thread-safe.
unsafe impl Send for UserData {}
unsafe impl Sync for UserData {}

struct CallbackFunctional {
    space: Space,
    eval: unsafe extern "C" fn(*mut c_void, *const f64, usize, *mut f64, *mut f64) -> i32,
    user: UserData,
}

impl CallbackFunctional {
    fn call(&self, u: &Field, gradient: Option<&mut [f64]>) -> active_subspace::Result<f64> {
        let mut value = f64::NAN;
        let g = gradient.map_or(ptr::null_mut(), |g| g.as_mut_ptr());
        let code = unsafe { (self.eval)(self.user.0, u.values().as_ptr(), u.values().len(), &mut value, g) };
        if code != 0 {
            return Err(Error::Numerical(format!("user callback returned {code}")));
        }
        Ok(value)
    }
}

impl Functional for CallbackFunctional {
    fn space(&self) -> &Space {
        &self.space
    }

    fn evaluate(&self, u: &Field) -> active_subspace::Result<f64> {
        self.call(u, None)
    }

    fn gradient(&self, u: &Field) -> active_subspace::Result<Field> {
        Ok(self.value_and_gradient(u)?.1)
    }

    fn value_and_gradient(&self, u: &Field) -> active_subspace::Result<(f64, Field)> {
        let mut g = vec![0.0; self.space.len()];
        let value = self.call(u, Some(&mut g))?;
        Ok((value, Field::from_values(&self.space, g)?))
    }
}

/// Functional backed by a C callback. `user_data` is passed through
/// untouched and must outlive the handle.
///
/// # Safety
/// `evaluate` must follow the [`AsEvaluateFn`] contract.
#[no_mangle]
pub unsafe extern "C" fn as_functional_new_callback(
    space: *const AsSpace,
    evaluate: AsEvaluateFn,
    user_data: *mut c_void,
    out: *mut *mut AsFunctional,
) -> AsStatus {
    guard(|| {
        let space = deref(space, "space")?.inner.clone();
        let eval = evaluate.ok_or_else(|| null("evaluate"))?;
        let f = CallbackFunctional {
            space,
            eval,
            user: UserData(user_data),
        };
        store(out, AsFunctional { inner: Box::new(f) })
    })
}

/// Evaluates `f(u)` and, when `gradient` is not null, its gradient.
///
/// # Safety
/// `u` must point to `len` values, `value` to one, `gradient` to `len` or be null.
#[no_mangle]
pub unsafe extern "C" fn as_functional_evaluate(
    functional: *const AsFunctional,
    u: *const f64,
    len: usize,
    value: *mut f64,
    gradient: *mut f64,
) -> AsStatus {
    guard(|| {
        let f = &deref(functional, "functional")?.inner;
        let u = read_field(f.space(), u, len)?;
        if gradient.is_null() {
            let v = f.evaluate(&u)?;
            return write_buffer(&[v], value, 1);
        }
        let (v, g) = f.value_and_gradient(&u)?;
        write_buffer(&[v], value, 1)?;
        write_buffer(g.values(), gradient, len)
    })
}

/// # Safety
/// `functional` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn as_functional_free(functional: *mut AsFunctional) {
    if !functional.is_null() {
        drop(Box::from_raw(functional));
    }
}

// ---- estimates ----

/// Monte Carlo estimate of the active subspace from `samples` gradients.
/// Eigenvalues at or below `rank_tol · σ₁` are dropped.
///
/// # Safety
/// `functional` and `measure` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn as_estimate_new(
    functional: *const AsFunctional,
    measure: *const AsMeasure,
    samples: usize,
    seed: u64,
    rank_tol: f64,
    out: *mut *mut AsEstimate,
) -> AsStatus {
    guard(|| {
        let f = &deref(functional, "functional")?.inner;
        let measure = &deref(measure, "measure")?.inner;
        let set = collect_gradients(f.as_ref(), measure, samples, seed)?;
        let estimate = eigendecompose(set, rank_tol)?;
        store(out, AsEstimate { inner: estimate })
    })
}

/// Number of retained eigenpairs, or 0 for a null handle.
///
/// # Safety
/// `estimate` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn as_estimate_rank(estimate: *const AsEstimate) -> usize {
    estimate.as_ref().map_or(0, |e| e.inner.rank())
}

/// Copies the retained eigenvalues, descending, into `out`.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn as_estimate_eigenvalues(estimate: *const AsEstimate, out: *mut f64, len: usize) -> AsStatus {
    guard(|| write_buffer(deref(estimate, "estimate")?.inner.eigenvalues(), out, len))
}

/// Copies eigenfunction `index` (0-based) into `out`.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn as_estimate_eigenfunction(
    estimate: *const AsEstimate,
    index: usize,
    out: *mut f64,
    len: usize,
) -> AsStatus {
    guard(|| {
        let e = &deref(estimate, "estimate")?.inner;
        let w = e
            .eigenfunctions()
            .basis()
            .get(index)
            .ok_or_else(|| invalid(format!("eigenfunction {index} out of range (rank {})", e.rank())))?;
        write_buffer(w.values(), out, len)
    })
}

/// Writes the estimate as JSON to `path`, with the gradient samples in
/// `samples_path` when it is not null.
///
/// # Safety
/// Paths must be NUL-terminated UTF-8 strings.
#[no_mangle]
pub unsafe extern "C" fn as_estimate_write(
    estimate: *const AsEstimate,
    path: *const c_char,
    samples_path: *const c_char,
) -> AsStatus {
    guard(|| {
        let e = &deref(estimate, "estimate")?.inner;
        let path = path_arg(path, "path")?;
        let sidecar = if samples_path.is_null() {
            None
        } else {
            Some(path_arg(samples_path, "samples_path")?)
        };
        write_estimate(&path, e, sidecar.as_deref())?;
        Ok(())
    })
}

/// # Safety
/// `estimate` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn as_estimate_free(estimate: *mut AsEstimate) {
    if !estimate.is_null() {
        drop(Box::from_raw(estimate));
    }
}
