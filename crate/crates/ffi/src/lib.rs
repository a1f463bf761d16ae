//! C ABI over `homlab`: opaque field and solution handles, status codes and a
//! thread-local last-error message.
//!
//! Every function returns a [`HomlabStatus`]; outputs go through pointers.
//! Handles are created by `*_new`/`*_sample`/`homlab_solve` and released with
//! the matching `*_free`. Passing a freed handle is undefined behavior.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use homlab::error::HomError;
use homlab::field::{check_moment_condition, mu_lambda, pack, unpack, CoefficientField};
use homlab::grid::GridSpec;
use homlab::models::{sample_field, EnsembleModel};
use homlab::solver::{solve_extended_corrector, CorrectorSolution, Scheme, SolverConfig};

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HomlabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidModel = 3,
    InvalidGrid = 4,
    NotPositiveDefinite = 5,
    NonFinite = 6,
    NotConverged = 7,
    Inconsistent = 8,
    BufferTooSmall = 9,
    Io = 10,
    Panic = 11,
}

/// Operator discretization.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HomlabScheme {
    CellTensor = 0,
    HarmonicFace = 1,
}

/// Opaque coefficient field.
pub struct HomlabField {
    inner: CoefficientField,
}

/// Opaque corrector solution.
pub struct HomlabSolution {
    inner: CorrectorSolution,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &HomError) -> HomlabStatus {
    match e {
        HomError::InvalidGrid(_) => HomlabStatus::InvalidGrid,
        HomError::InvalidModel(_) | HomError::NonFiniteMoment { .. } => HomlabStatus::InvalidModel,
        HomError::NotPositiveDefinite { .. } | HomError::SingularFace { .. } => HomlabStatus::NotPositiveDefinite,
        HomError::NonFinite { .. } => HomlabStatus::NonFinite,
        HomError::NotConverged { .. } => HomlabStatus::NotConverged,
        HomError::Inconsistent(_) => HomlabStatus::Inconsistent,
        HomError::Io(_) => HomlabStatus::Io,
        _ => HomlabStatus::InvalidArgument,
    }
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), HomlabStatus>) -> HomlabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HomlabStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            HomlabStatus::Panic
        }
    }
}

fn fail(e: HomError) -> HomlabStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> HomlabStatus {
    set_error(format!("{what} is null"));
    HomlabStatus::NullPointer
}

unsafe fn out_slice<'a>(ptr: *mut f64, len: usize, need: usize) -> Result<&'a mut [f64], HomlabStatus> {
    if ptr.is_null() {
        return Err(null("output buffer"));
    }
    if len < need {
        set_error(format!("buffer holds {len} values, need {need}"));
        return Err(HomlabStatus::BufferTooSmall);
    }
    Ok(std::slice::from_raw_parts_mut(ptr, need))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn homlab_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn homlab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// 1 if `1/p + 1/q < 2/d` (`strict != 0`) or `<=` otherwise, else 0.
#[no_mangle]
pub extern "C" fn homlab_check_moment_condition(p: f64, q: f64, d: usize, strict: i32) -> i32 {
    check_moment_condition(p, q, d, strict != 0) as i32
}

/// Builds a field from packed cells: `L^d` records of `d(d+1)/2` values,
/// upper triangle row by row, row-major cell order.
///
/// # Safety
/// `packed` must point to `len` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn homlab_field_new(d: usize, l: usize, packed: *const f64, len: usize, out: *mut *mut HomlabField) -> HomlabStatus {
    guard(|| {
        if packed.is_null() {
            return Err(null("packed"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let grid = GridSpec::unit(d, l).map_err(fail)?;
        let s = d * (d + 1) / 2;
        if len != grid.n_cells() * s {
            return Err(fail(HomError::InvalidArgument(format!("expected {} values, got {len}", grid.n_cells() * s))));
        }
        let data = std::slice::from_raw_parts(packed, len);
        let field = CoefficientField::from_fn(grid, "external", 0, |x| unpack(d, &data[x * s..(x + 1) * s])).map_err(fail)?;
        *out = Box::into_raw(Box::new(HomlabField { inner: field }));
        Ok(())
    })
}

/// Samples a field from a JSON model description, e.g.
/// `{"kind":"independent_block_log_normal","block_side":2,"log_variance":0.5,"p":4,"q":4}`.
///
/// # Safety
/// `model_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn homlab_field_sample(
    model_json: *const c_char,
    d: usize,
    l: usize,
    seed: u64,
    out: *mut *mut HomlabField,
) -> HomlabStatus {
    guard(|| {
        if model_json.is_null() {
            return Err(null("model_json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(model_json).to_str().map_err(|e| fail(HomError::InvalidArgument(e.to_string())))?;
        let model: EnsembleModel = serde_json::from_str(text).map_err(|e| fail(HomError::InvalidModel(e.to_string())))?;
        let grid = GridSpec::unit(d, l).map_err(fail)?;
        let field = sample_field(&model, &grid, seed).map_err(fail)?;
        *out = Box::into_raw(Box::new(HomlabField { inner: field }));
        Ok(())
    })
}

/// # Safety
/// `field` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn homlab_field_free(field: *mut HomlabField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Number of cells.
///
/// # Safety
/// `field` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn homlab_field_n_cells(field: *const HomlabField, out: *mut usize) -> HomlabStatus {
    guard(|| {
        let f = field.as_ref().ok_or_else(|| null("field"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = f.inner.n_cells();
        Ok(())
    })
}

/// Writes the packed cells (see [`homlab_field_new`]) into `buf`.
///
/// # Safety
/// `field` must be a live handle; `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn homlab_field_cells(field: *const HomlabField, buf: *mut f64, len: usize) -> HomlabStatus {
    guard(|| {
        let f = &field.as_ref().ok_or_else(|| null("field"))?.inner;
        let d = f.grid.d;
        let s = d * (d + 1) / 2;
        let dst = out_slice(buf, len, f.n_cells() * s)?;
        for x in 0..f.n_cells() {
            pack(d, &f.cell(x), &mut dst[x * s..(x + 1) * s]);
        }
        Ok(())
    })
}

/// Pointwise `mu = |a|` and `lambda = 1/|a^-1|`, one value per cell each.
///
/// # Safety
/// `field` must be a live handle; `mu` and `lambda` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn homlab_field_mu_lambda(field: *const HomlabField, mu: *mut f64, lambda: *mut f64, len: usize) -> HomlabStatus {
    guard(|| {
        let f = &field.as_ref().ok_or_else(|| null("field"))?.inner;
        let e = mu_lambda(f).map_err(fail)?;
        out_slice(mu, len, e.mu.len())?.copy_from_slice(&e.mu);
        out_slice(lambda, len, e.lambda.len())?.copy_from_slice(&e.lambda);
        Ok(())
    })
}

/// Solves the corrector and flux-corrector problems at relative tolerance `tol`.
///
/// # Safety
/// `field` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn homlab_solve(
    field: *const HomlabField,
    scheme: HomlabScheme,
    tol: f64,
    out: *mut *mut HomlabSolution,
) -> HomlabStatus {
    guard(|| {
        let f = &field.as_ref().ok_or_else(|| null("field"))?.inner;
        if out.is_null() {
            return Err(null("out"));
        }
        let scheme = match scheme {
            HomlabScheme::CellTensor => Scheme::CellTensor,
            HomlabScheme::HarmonicFace => Scheme::HarmonicFace,
        };
        let cfg = SolverConfig { scheme, ..SolverConfig::with_tol(tol) };
        let sol = solve_extended_corrector(f, &cfg).map_err(fail)?;
        if let Some(s) = sol.stats.iter().find(|s| !s.converged) {
            return Err(fail(HomError::NotConverged { iterations: s.iterations, residual: s.relative_residual }));
        }
        *out = Box::into_raw(Box::new(HomlabSolution { inner: sol }));
        Ok(())
    })
}

/// # Safety
/// `sol` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn homlab_solution_free(sol: *mut HomlabSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Homogenized matrix, `d x d` row-major.
///
/// # Safety
/// `sol` must be a live handle; `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn homlab_solution_a_hom(sol: *const HomlabSolution, buf: *mut f64, len: usize) -> HomlabStatus {
    guard(|| {
        let s = &sol.as_ref().ok_or_else(|| null("solution"))?.inner;
        let d = s.d();
        let dst = out_slice(buf, len, d * d)?;
        for i in 0..d {
            for j in 0..d {
                dst[i * d + j] = s.a_hom[i][j];
            }
        }
        Ok(())
    })
}

/// Corrector `phi_i`, one value per cell.
///
/// # Safety
/// `sol` must be a live handle; `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn homlab_solution_phi(sol: *const HomlabSolution, i: usize, buf: *mut f64, len: usize) -> HomlabStatus {
    guard(|| {
        let s = &sol.as_ref().ok_or_else(|| null("solution"))?.inner;
        if i >= s.d() {
            return Err(fail(HomError::InvalidArgument(format!("component {i} out of range"))));
        }
        out_slice(buf, len, s.phi[i].len())?.copy_from_slice(&s.phi[i]);
        Ok(())
    })
}

/// Flux corrector `sigma_ijk`, one value per cell; skew in `(j, k)`.
///
/// # Safety
/// `sol` must be a live handle; `buf` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn homlab_solution_sigma(
    sol: *const HomlabSolution,
    i: usize,
    j: usize,
    k: usize,
    buf: *mut f64,
    len: usize,
) -> HomlabStatus {
    guard(|| {
        let s = &sol.as_ref().ok_or_else(|| null("solution"))?.inner;
        let d = s.d();
        if i >= d || j >= d || k >= d {
            return Err(fail(HomError::InvalidArgument(format!("index ({i}, {j}, {k}) out of range"))));
        }
        let n = s.op.n();
        let dst = out_slice(buf, len, n)?;
        for (x, v) in dst.iter_mut().enumerate() {
            *v = s.sigma_at(i, j, k, x);
        }
        Ok(())
    })
}

/// Worst relative residuals over components: corrector solve, `div q`, and the
/// flux-corrector divergence identity.
///
/// # Safety
/// `sol` must be a live handle; `out` must hold 3 values.
#[no_mangle]
pub unsafe extern "C" fn homlab_solution_residuals(sol: *const HomlabSolution, out: *mut f64) -> HomlabStatus {
    guard(|| {
        let s = &sol.as_ref().ok_or_else(|| null("solution"))?.inner;
        let dst = out_slice(out, 3, 3)?;
        let worst = |v: &[f64]| v.iter().copied().fold(0.0f64, f64::max);
        dst[0] = worst(&s.residuals.phi);
        dst[1] = worst(&s.residuals.divergence);
        dst[2] = worst(&s.residuals.sigma);
        Ok(())
    })
}
