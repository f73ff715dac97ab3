//! C ABI for the randomized inverse-problem solvers.
//!
//! All functions are panic-safe, return a [`RandinvStatus`] code, and hand
//! out opaque handles that must be released with the matching `_destroy`
//! function. Matrices cross the boundary in row-major order; vectors are
//! plain contiguous `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::{DMatrix, DVector};
use randinv::map_solvers::SolverOptions;
use randinv::methods::{solve_method, MethodId};
use randinv::problems::{generate, ProblemSpec};
use randinv::randomize::{RandomizationPlan, SketchDistribution};
use randinv::{Covariance, Error, InverseProblem, PtoMap, SolveResult};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandinvStatus {
    /// Success.
    RandinvOk = 0,
    /// A required pointer argument was null.
    RandinvNullPointer = 1,
    /// An argument was out of range or unparsable.
    RandinvInvalidArgument = 2,
    /// Operand dimensions disagree.
    RandinvDimensionMismatch = 3,
    /// The iterative solver did not reach its tolerance.
    RandinvNotConverged = 4,
    /// A covariance or linear system was singular.
    RandinvSingular = 5,
    /// Any other failure; see `randinv_last_error`.
    RandinvInternalError = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn status_of(err: &Error) -> RandinvStatus {
    match err {
        Error::DimensionMismatch { .. } => RandinvStatus::RandinvDimensionMismatch,
        Error::SolverDiverged { .. } | Error::LineSearchFailed(_) => {
            RandinvStatus::RandinvNotConverged
        }
        Error::SingularCovariance | Error::SingularGain | Error::NotSpd => {
            RandinvStatus::RandinvSingular
        }
        Error::InvalidParameter(_) | Error::Config(_) | Error::NotLinear | Error::NoDenseMap => {
            RandinvStatus::RandinvInvalidArgument
        }
        _ => RandinvStatus::RandinvInternalError,
    }
}

fn fail(err: &Error) -> RandinvStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// Opaque inverse-problem handle.
pub struct RandinvProblem {
    inner: InverseProblem,
}

/// Opaque solve-result handle.
pub struct RandinvResult {
    inner: SolveResult,
}

fn guarded<F: FnOnce() -> RandinvStatus>(f: F) -> RandinvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            RandinvStatus::RandinvInternalError
        }
    }
}

/// Message for the last error on this thread; valid until the next failing
/// call on the same thread.
#[no_mangle]
pub extern "C" fn randinv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Crate version as a static string.
#[no_mangle]
pub extern "C" fn randinv_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Create a dense linear Gaussian problem. `a` is row-major with `k` rows
/// (observations) and `n` columns (parameters); `data` has length `k`,
/// `prior_mean` length `n`. Noise and prior covariances are scaled
/// identities with the given (positive) variances.
///
/// # Safety
/// `a`, `data`, and `prior_mean` must point to buffers of the stated
/// lengths; `out` must be a valid location for the handle.
#[no_mangle]
pub unsafe extern "C" fn randinv_problem_dense_create(
    a: *const f64,
    k: usize,
    n: usize,
    data: *const f64,
    prior_mean: *const f64,
    noise_var: f64,
    prior_var: f64,
    out: *mut *mut RandinvProblem,
) -> RandinvStatus {
    guarded(|| {
        if a.is_null() || data.is_null() || prior_mean.is_null() || out.is_null() {
            set_error("null pointer argument");
            return RandinvStatus::RandinvNullPointer;
        }
        if k == 0 || n == 0 {
            set_error("dimensions must be positive");
            return RandinvStatus::RandinvInvalidArgument;
        }
        let a_slice = std::slice::from_raw_parts(a, k * n);
        let mat = DMatrix::from_row_slice(k, n, a_slice);
        let d = DVector::from_column_slice(std::slice::from_raw_parts(data, k));
        let m = DVector::from_column_slice(std::slice::from_raw_parts(prior_mean, n));
        let build = || -> Result<InverseProblem, Error> {
            InverseProblem::new(
                PtoMap::from_dense(mat),
                d,
                m,
                Covariance::scaled_identity(k, noise_var)?,
                Covariance::scaled_identity(n, prior_var)?,
            )
        };
        match build() {
            Ok(p) => {
                *out = Box::into_raw(Box::new(RandinvProblem { inner: p }));
                RandinvStatus::RandinvOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Create one of the built-in benchmark problems by name ("deconv1d",
/// "xray", "advdiff", "nlheat"). `size` overrides the default parameter
/// count / grid side when nonzero.
///
/// # Safety
/// `id` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn randinv_problem_benchmark_create(
    id: *const c_char,
    size: usize,
    out: *mut *mut RandinvProblem,
) -> RandinvStatus {
    guarded(|| {
        if id.is_null() || out.is_null() {
            set_error("null pointer argument");
            return RandinvStatus::RandinvNullPointer;
        }
        let name = match CStr::from_ptr(id).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("benchmark id is not valid UTF-8");
                return RandinvStatus::RandinvInvalidArgument;
            }
        };
        let build = || -> Result<InverseProblem, Error> {
            let mut spec = match name {
                "deconv1d" => ProblemSpec::deconv1d(),
                "xray" => ProblemSpec::xray(),
                "advdiff" => ProblemSpec::advdiff(),
                "nlheat" => ProblemSpec::nlheat(),
                _ => return Err(Error::Config(format!("unknown benchmark '{name}'"))),
            };
            if size > 0 {
                spec.n = size;
            }
            Ok(generate(&spec)?.problem)
        };
        match build() {
            Ok(p) => {
                *out = Box::into_raw(Box::new(RandinvProblem { inner: p }));
                RandinvStatus::RandinvOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a problem handle. Null is ignored.
///
/// # Safety
/// `p` must be a handle from a `randinv_problem_*_create` call, released
/// at most once.
#[no_mangle]
pub unsafe extern "C" fn randinv_problem_destroy(p: *mut RandinvProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Parameter count of the problem.
///
/// # Safety
/// `p` must be a live problem handle.
#[no_mangle]
pub unsafe extern "C" fn randinv_problem_param_dim(p: *const RandinvProblem) -> usize {
    if p.is_null() {
        return 0;
    }
    (*p).inner.param_dim()
}

/// Solve with the named method ("MAP", "RMAP", "RMA", "RMA_RMAP", "RS_U1",
/// "RS", "ENKF", "ALL", ...) using `n_samples` per randomized variable and
/// the given RNG seed.
///
/// # Safety
/// `p` must be a live problem handle, `method` a NUL-terminated string, and
/// `out` a valid location for the result handle.
#[no_mangle]
pub unsafe extern "C" fn randinv_solve(
    p: *const RandinvProblem,
    method: *const c_char,
    n_samples: usize,
    seed: u64,
    out: *mut *mut RandinvResult,
) -> RandinvStatus {
    guarded(|| {
        if p.is_null() || method.is_null() || out.is_null() {
            set_error("null pointer argument");
            return RandinvStatus::RandinvNullPointer;
        }
        let name = match CStr::from_ptr(method).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("method name is not valid UTF-8");
                return RandinvStatus::RandinvInvalidArgument;
            }
        };
        let solve = || -> Result<SolveResult, Error> {
            let id = MethodId::parse(name)?;
            let plan =
                id.default_plan(RandomizationPlan::new(SketchDistribution::Gaussian, n_samples.max(1), seed));
            solve_method(&(*p).inner, &plan, &SolverOptions::default(), id)
        };
        match solve() {
            Ok(r) => {
                *out = Box::into_raw(Box::new(RandinvResult { inner: r }));
                RandinvStatus::RandinvOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a result handle. Null is ignored.
///
/// # Safety
/// `r` must be a handle from `randinv_solve`, released at most once.
#[no_mangle]
pub unsafe extern "C" fn randinv_result_destroy(r: *mut RandinvResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Length of the estimate vector.
///
/// # Safety
/// `r` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn randinv_result_dim(r: *const RandinvResult) -> usize {
    if r.is_null() {
        return 0;
    }
    (*r).inner.estimate.len()
}

/// Copy the estimate into `buf` (capacity `len`, which must equal the
/// result dimension).
///
/// # Safety
/// `r` must be a live result handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn randinv_result_estimate(
    r: *const RandinvResult,
    buf: *mut f64,
    len: usize,
) -> RandinvStatus {
    guarded(|| {
        if r.is_null() || buf.is_null() {
            set_error("null pointer argument");
            return RandinvStatus::RandinvNullPointer;
        }
        let est = &(*r).inner.estimate;
        if len != est.len() {
            set_error("buffer length does not match result dimension");
            return RandinvStatus::RandinvDimensionMismatch;
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(est.as_slice());
        RandinvStatus::RandinvOk
    })
}

/// Final objective value of the solve.
///
/// # Safety
/// `r` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn randinv_result_objective(r: *const RandinvResult) -> f64 {
    if r.is_null() {
        return f64::NAN;
    }
    (*r).inner.objective_value
}

/// Iteration count of the dominant inner solver.
///
/// # Safety
/// `r` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn randinv_result_iterations(r: *const RandinvResult) -> usize {
    if r.is_null() {
        return 0;
    }
    (*r).inner.iterations
}

/// 1 when the solve finished without convergence flags, 0 otherwise.
///
/// # Safety
/// `r` must be a live result handle.
#[no_mangle]
pub unsafe extern "C" fn randinv_result_clean(r: *const RandinvResult) -> i32 {
    if r.is_null() {
        return 0;
    }
    i32::from((*r).inner.flags.is_clean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;
    use std::ptr;

    fn dense_problem() -> *mut RandinvProblem {
        // 3x3 identity forward map, data = prior pull toward different points.
        let a = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let d = [1.0, 2.0, 3.0];
        let m = [0.0; 3];
        let mut handle: *mut RandinvProblem = ptr::null_mut();
        let st = unsafe {
            randinv_problem_dense_create(a.as_ptr(), 3, 3, d.as_ptr(), m.as_ptr(), 1.0, 1.0, &mut handle)
        };
        assert_eq!(st, RandinvStatus::RandinvOk);
        handle
    }

    #[test]
    fn dense_map_solve_round_trip() {
        let p = dense_problem();
        let method = CString::new("MAP").unwrap();
        let mut r: *mut RandinvResult = ptr::null_mut();
        let st = unsafe { randinv_solve(p, method.as_ptr(), 0, 0, &mut r) };
        assert_eq!(st, RandinvStatus::RandinvOk);
        let mut buf = [0.0f64; 3];
        unsafe {
            assert_eq!(randinv_result_dim(r), 3);
            assert_eq!(
                randinv_result_estimate(r, buf.as_mut_ptr(), 3),
                RandinvStatus::RandinvOk
            );
            assert_eq!(randinv_result_clean(r), 1);
            randinv_result_destroy(r);
            randinv_problem_destroy(p);
        }
        // Identity map, unit covariances: u = d/2.
        for (v, d) in buf.iter().zip([1.0, 2.0, 3.0]) {
            assert!((v - d / 2.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn randomized_solve_approaches_map() {
        let p = dense_problem();
        let map_m = CString::new("MAP").unwrap();
        let rmap_m = CString::new("RMAP").unwrap();
        let mut r_map: *mut RandinvResult = ptr::null_mut();
        let mut r_rmap: *mut RandinvResult = ptr::null_mut();
        unsafe {
            assert_eq!(
                randinv_solve(p, map_m.as_ptr(), 0, 0, &mut r_map),
                RandinvStatus::RandinvOk
            );
            assert_eq!(
                randinv_solve(p, rmap_m.as_ptr(), 20000, 7, &mut r_rmap),
                RandinvStatus::RandinvOk
            );
            let mut a = [0.0f64; 3];
            let mut b = [0.0f64; 3];
            randinv_result_estimate(r_map, a.as_mut_ptr(), 3);
            randinv_result_estimate(r_rmap, b.as_mut_ptr(), 3);
            let err: f64 = a
                .iter()
                .zip(&b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            assert!(err <= 0.05, "err {err}");
            randinv_result_destroy(r_map);
            randinv_result_destroy(r_rmap);
            randinv_problem_destroy(p);
        }
    }

    #[test]
    fn error_paths_and_messages() {
        let mut handle: *mut RandinvProblem = ptr::null_mut();
        let st = unsafe {
            randinv_problem_dense_create(
                ptr::null(),
                3,
                3,
                ptr::null(),
                ptr::null(),
                1.0,
                1.0,
                &mut handle,
            )
        };
        assert_eq!(st, RandinvStatus::RandinvNullPointer);

        let p = dense_problem();
        let bad = CString::new("NOSUCH").unwrap();
        let mut r: *mut RandinvResult = ptr::null_mut();
        let st = unsafe { randinv_solve(p, bad.as_ptr(), 10, 0, &mut r) };
        assert_eq!(st, RandinvStatus::RandinvInvalidArgument);
        let msg = unsafe { CStr::from_ptr(randinv_last_error()) };
        assert!(msg.to_str().unwrap().contains("NOSUCH"));
        unsafe { randinv_problem_destroy(p) };
    }

    #[test]
    fn benchmark_creation() {
        let id = CString::new("deconv1d").unwrap();
        let mut p: *mut RandinvProblem = ptr::null_mut();
        let st = unsafe { randinv_problem_benchmark_create(id.as_ptr(), 64, &mut p) };
        assert_eq!(st, RandinvStatus::RandinvOk);
        assert_eq!(unsafe { randinv_problem_param_dim(p) }, 64);
        unsafe { randinv_problem_destroy(p) };

        let bad = CString::new("nope").unwrap();
        let st = unsafe { randinv_problem_benchmark_create(bad.as_ptr(), 0, &mut p) };
        assert_eq!(st, RandinvStatus::RandinvInvalidArgument);
    }

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(randinv_version()) };
        assert!(!v.to_str().unwrap().is_empty());
    }
}
