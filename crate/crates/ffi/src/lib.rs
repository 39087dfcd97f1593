//! C interface to `robust-oed`.
//!
//! Objects are opaque heap handles released with the matching `*_free`
//! function. Every fallible call returns an [`OedStatus`]; the message of
//! the most recent failure on the calling thread is available through
//! [`oed_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use robust_oed::criteria::{evaluate, gradient, Criterion};
use robust_oed::error::OedError;
use robust_oed::inverse::{Design, NoiseModel};
use robust_oed::nalgebra::DMatrix;
use robust_oed::optimizer::{
    gamma_sweep, project_feasible, solve_relaxed, GammaSweepConfig, OptimizerConfig,
};
use robust_oed::scenarios::one_out_scenarios;
use robust_oed::structural::{assemble_tiered_model, compute_frf, FrfMatrix, TieredTowerConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OedStatus {
    Ok = 0,
    /// Null pointer, zero length, or a value outside its domain.
    InvalidArgument = 1,
    InvalidConfig = 2,
    /// Rank loss, resonance, or too little data.
    IllPosed = 3,
    CombinatorialGuard = 4,
    Io = 5,
    Panic = 6,
}

pub struct OedFrf {
    inner: FrfMatrix,
}

pub struct OedCriterion {
    inner: Criterion,
}

pub struct OedDesign {
    inner: Design,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &OedError) -> OedStatus {
    match err.exit_code() {
        2 => OedStatus::InvalidConfig,
        3 => OedStatus::IllPosed,
        4 => OedStatus::CombinatorialGuard,
        _ => OedStatus::Io,
    }
}

enum Fail {
    Arg(&'static str),
    Oed(OedError),
}

impl From<OedError> for Fail {
    fn from(e: OedError) -> Self {
        Fail::Oed(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OedStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OedStatus::Ok,
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg.to_string());
            OedStatus::InvalidArgument
        }
        Ok(Err(Fail::Oed(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            OedStatus::Panic
        }
    }
}

unsafe fn input<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if p.is_null() || n == 0 {
        return Err(Fail::Arg(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn output<'a>(p: *mut f64, n: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() || n == 0 {
        return Err(Fail::Arg(what));
    }
    Ok(slice::from_raw_parts_mut(p, n))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Arg(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Arg("output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the last error message on this thread into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length, or 0
/// when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn oed_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Wraps a row-major `n_sensors x n_params` matrix.
///
/// # Safety
/// `data` must point to `n_sensors * n_params` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn oed_frf_new(
    data: *const f64,
    n_sensors: usize,
    n_params: usize,
    out: *mut *mut OedFrf,
) -> OedStatus {
    guard(|| {
        let len = n_sensors
            .checked_mul(n_params)
            .ok_or(Fail::Arg("size overflow"))?;
        let values = input(data, len, "frf data is null or empty")?;
        let frf = FrfMatrix::from_matrix(DMatrix::from_row_slice(n_sensors, n_params, values))?;
        store(out, OedFrf { inner: frf })
    })
}

/// Assembles the built-in tiered tower and extracts its FRF.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn oed_frf_demo(out: *mut *mut OedFrf) -> OedStatus {
    guard(|| {
        let cfg = TieredTowerConfig::demo();
        let model = assemble_tiered_model(&cfg)?;
        let frf = compute_frf(&model, cfg.frequency, cfg.extraction_mode)?;
        store(out, OedFrf { inner: frf })
    })
}

/// # Safety
/// `frf` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn oed_frf_n_sensors(frf: *const OedFrf) -> usize {
    frf.as_ref().map_or(0, |f| f.inner.n_sensors())
}

/// # Safety
/// `frf` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn oed_frf_n_params(frf: *const OedFrf) -> usize {
    frf.as_ref().map_or(0, |f| f.inner.n_params())
}

/// # Safety
/// `frf` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn oed_frf_free(frf: *mut OedFrf) {
    if !frf.is_null() {
        drop(Box::from_raw(frf));
    }
}

/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn oed_criterion_classical(
    sigma: f64,
    out: *mut *mut OedCriterion,
) -> OedStatus {
    guard(|| {
        let c = Criterion::classical(NoiseModel::new(sigma)?);
        store(out, OedCriterion { inner: c })
    })
}

/// Failure-probability criterion; `survival[i]` is the probability that
/// sensor `i` keeps working.
///
/// # Safety
/// `survival` must point to `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn oed_criterion_pof(
    survival: *const f64,
    n: usize,
    sigma: f64,
    out: *mut *mut OedCriterion,
) -> OedStatus {
    guard(|| {
        let s = input(survival, n, "survival is null or empty")?;
        let c = Criterion::pof(s.to_vec(), NoiseModel::new(sigma)?)?;
        store(out, OedCriterion { inner: c })
    })
}

/// Average over the `n_sensors` single-sensor failures.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn oed_criterion_one_out(
    n_sensors: usize,
    sigma: f64,
    out: *mut *mut OedCriterion,
) -> OedStatus {
    guard(|| {
        if n_sensors == 0 {
            return Err(Fail::Arg("n_sensors must be positive"));
        }
        let c = Criterion::scenario_avg(one_out_scenarios(n_sensors), NoiseModel::new(sigma)?)?;
        store(out, OedCriterion { inner: c })
    })
}

/// # Safety
/// `c` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn oed_criterion_free(c: *mut OedCriterion) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// `costs` may be null for unit costs.
///
/// # Safety
/// `weights` (and `costs` when non-null) must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn oed_design_new(
    weights: *const f64,
    costs: *const f64,
    n: usize,
    budget: f64,
    out: *mut *mut OedDesign,
) -> OedStatus {
    guard(|| {
        let w = input(weights, n, "weights is null or empty")?.to_vec();
        let c = if costs.is_null() {
            vec![1.0; n]
        } else {
            input(costs, n, "costs")?.to_vec()
        };
        store(
            out,
            OedDesign {
                inner: Design::new(w, c, budget)?,
            },
        )
    })
}

/// # Safety
/// `d` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn oed_design_len(d: *const OedDesign) -> usize {
    d.as_ref().map_or(0, |d| d.inner.len())
}

/// Copies the weights into `buf`, which must hold exactly the design length.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn oed_design_weights(
    d: *const OedDesign,
    buf: *mut f64,
    len: usize,
) -> OedStatus {
    guard(|| {
        let d = handle(d, "design is null")?;
        if len != d.inner.len() {
            return Err(Fail::Arg("buffer length does not match the design"));
        }
        output(buf, len, "buffer is null")?.copy_from_slice(d.inner.weights());
        Ok(())
    })
}

/// # Safety
/// `d` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn oed_design_free(d: *mut OedDesign) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// # Safety
/// Handles must be live; `value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn oed_evaluate(
    frf: *const OedFrf,
    criterion: *const OedCriterion,
    design: *const OedDesign,
    value: *mut f64,
) -> OedStatus {
    guard(|| {
        let v = evaluate(
            &handle(criterion, "criterion is null")?.inner,
            &handle(frf, "frf is null")?.inner,
            &handle(design, "design is null")?.inner,
        )?;
        *value.as_mut().ok_or(Fail::Arg("value is null"))? = v;
        Ok(())
    })
}

/// # Safety
/// Handles must be live; `grad` must point to `len` doubles, with `len`
/// equal to the number of sensors.
#[no_mangle]
pub unsafe extern "C" fn oed_gradient(
    frf: *const OedFrf,
    criterion: *const OedCriterion,
    design: *const OedDesign,
    grad: *mut f64,
    len: usize,
) -> OedStatus {
    guard(|| {
        let frf = &handle(frf, "frf is null")?.inner;
        if len != frf.n_sensors() {
            return Err(Fail::Arg("gradient length does not match the sensor count"));
        }
        let g = gradient(
            &handle(criterion, "criterion is null")?.inner,
            frf,
            &handle(design, "design is null")?.inner,
        )?;
        output(grad, len, "gradient buffer is null")?.copy_from_slice(&g);
        Ok(())
    })
}

/// Euclidean projection of `v` onto the box and budget; writes into `out`.
///
/// # Safety
/// `v`, `costs`, `out` must each point to `n` doubles; `costs` may be null
/// for unit costs.
#[no_mangle]
pub unsafe extern "C" fn oed_project(
    v: *const f64,
    costs: *const f64,
    n: usize,
    budget: f64,
    out: *mut f64,
) -> OedStatus {
    guard(|| {
        let v = input(v, n, "v is null or empty")?;
        let c = if costs.is_null() {
            vec![1.0; n]
        } else {
            input(costs, n, "costs")?.to_vec()
        };
        let p = project_feasible(v, &c, budget)?;
        output(out, n, "out is null")?.copy_from_slice(&p);
        Ok(())
    })
}

/// Relaxed optimum at penalty `gamma` from `design0`, with default solver
/// settings except `max_iters` (0 keeps the default).
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn oed_solve_relaxed(
    frf: *const OedFrf,
    criterion: *const OedCriterion,
    design0: *const OedDesign,
    gamma: f64,
    max_iters: usize,
    out: *mut *mut OedDesign,
) -> OedStatus {
    guard(|| {
        let mut cfg = OptimizerConfig::default();
        if max_iters > 0 {
            cfg.max_iters = max_iters;
        }
        let sol = solve_relaxed(
            &handle(frf, "frf is null")?.inner,
            &handle(criterion, "criterion is null")?.inner,
            &handle(design0, "design0 is null")?.inner,
            gamma,
            &cfg,
        )?;
        store(out, OedDesign { inner: sol.design })
    })
}

/// Binary design from a log-spaced penalty sweep. `fallback` (optional)
/// is set when no grid point was binary and the design is a rounding.
///
/// # Safety
/// Handles must be live; `out` must be valid; `fallback` may be null.
#[no_mangle]
pub unsafe extern "C" fn oed_gamma_sweep(
    frf: *const OedFrf,
    criterion: *const OedCriterion,
    design0: *const OedDesign,
    gamma_min: f64,
    gamma_max: f64,
    count: usize,
    out: *mut *mut OedDesign,
    fallback: *mut bool,
) -> OedStatus {
    guard(|| {
        let sweep = GammaSweepConfig {
            gamma_min,
            gamma_max,
            count,
            ..GammaSweepConfig::default()
        };
        let res = gamma_sweep(
            &handle(frf, "frf is null")?.inner,
            &handle(criterion, "criterion is null")?.inner,
            &handle(design0, "design0 is null")?.inner,
            &sweep,
            &OptimizerConfig::default(),
        )?;
        if let Some(f) = fallback.as_mut() {
            *f = res.fallback;
        }
        store(out, OedDesign { inner: res.design })
    })
}
