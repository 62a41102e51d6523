//! C interface to `burgerslab`.
//!
//! Configs and states are opaque heap handles created by `*_new`-style
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`BlStatus`]; on failure `bl_last_error` describes the cause.
//! Panics never cross the boundary and are reported as `BL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use burgerslab::config::FileConfig;
use burgerslab::snapshot::{load_snapshot, save_snapshot, SnapshotMeta};
use burgerslab::spectral::heat_operator_norm;
use burgerslab::{
    norm, simulate, simulate_controlled, steady_state, Error, ForcingBasis, NormTag, SeedLineage, SimConfig,
    SpectralState,
};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    CflViolation = 3,
    NotConverged = 4,
    Io = 5,
    Format = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlNorm {
    L1 = 0,
    L2 = 1,
    Linf = 2,
    /// Spectral `H^s`, with `s` passed separately.
    Hs = 3,
}

/// Opaque simulation config.
pub struct BlConfig(SimConfig);

/// Opaque spectral state.
pub struct BlState(SpectralState);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let msg = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> BlStatus {
    match err {
        Error::Cfl { .. } => BlStatus::CflViolation,
        Error::NotConverged { .. } => BlStatus::NotConverged,
        Error::Io(_) => BlStatus::Io,
        Error::VersionMismatch { .. } | Error::Checksum | Error::Format(_) | Error::Json(_) => BlStatus::Format,
        Error::Member { source, .. } => status_of(source),
        _ => BlStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BlStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_last_error(&format!("null pointer: {what}"));
            BlStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            BlStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    unsafe { p.as_mut() }.ok_or(Failure::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidArgument("path is not UTF-8".into())))?;
    Ok(PathBuf::from(s))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message for the last failed call on this thread; empty if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Config with forcing profiles on `[1, 2]` of unit amplitude and `h = 0`.
///
/// # Safety
/// `out` must be null or point to writable storage for a pointer.
#[no_mangle]
pub unsafe extern "C" fn bl_config_new(nu: f64, n_modes: usize, dt: f64, out: *mut *mut BlConfig) -> BlStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        let basis = ForcingBasis::build(1.0, 2.0, 1.0, 1.0, n_modes)?;
        let config = SimConfig::new(nu, dt, basis)?;
        *out = boxed(BlConfig(config));
        Ok(())
    })
}

/// Model keys of a TOML run config; experiment sections are ignored.
///
/// # Safety
/// `path` must be null or a NUL-terminated string; `out` as in `bl_config_new`.
#[no_mangle]
pub unsafe extern "C" fn bl_config_from_toml(path_ptr: *const c_char, out: *mut *mut BlConfig) -> BlStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        let file = FileConfig::load(&unsafe { path(path_ptr) }?)?;
        *out = boxed(BlConfig(file.model.sim_config()?));
        Ok(())
    })
}

/// Replaces the deterministic forcing by `h` (sine coefficients, `len ≤ n_modes`).
///
/// # Safety
/// `config` must be a live handle; `h` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn bl_config_set_forcing(config: *mut BlConfig, h: *const f64, len: usize) -> BlStatus {
    guard(|| {
        let config = unsafe { out_ptr(config, "config") }?;
        let h = unsafe { slice(h, len, "h") }?;
        let n = config.0.n_modes;
        if len > n {
            return Err(Error::InvalidArgument(format!("{len} coefficients for {n} modes")).into());
        }
        let state = if len == 0 { SpectralState::zeros(n) } else { SpectralState::new(h.to_vec())?.resized(n) };
        config.0 = config.0.clone().with_h(state)?;
        Ok(())
    })
}

/// Number of modes, or 0 for a null handle.
///
/// # Safety
/// `config` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bl_config_n_modes(config: *const BlConfig) -> usize {
    unsafe { config.as_ref() }.map_or(0, |c| c.0.n_modes)
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bl_config_free(config: *mut BlConfig) {
    if !config.is_null() {
        drop(unsafe { Box::from_raw(config) });
    }
}

/// State from `n` sine coefficients.
///
/// # Safety
/// `coeffs` must point to `n` doubles; `out` as in `bl_config_new`.
#[no_mangle]
pub unsafe extern "C" fn bl_state_new(coeffs: *const f64, n: usize, out: *mut *mut BlState) -> BlStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        let c = unsafe { slice(coeffs, n, "coeffs") }?;
        *out = boxed(BlState(SpectralState::new(c.to_vec())?));
        Ok(())
    })
}

/// # Safety
/// `state` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bl_state_n_modes(state: *const BlState) -> usize {
    unsafe { state.as_ref() }.map_or(0, |s| s.0.n_modes())
}

/// Copies the coefficients into `out`, which must hold exactly `n_modes` values.
///
/// # Safety
/// `state` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bl_state_coeffs(state: *const BlState, out: *mut f64, len: usize) -> BlStatus {
    guard(|| {
        let state = unsafe { deref(state, "state") }?;
        let n = state.0.n_modes();
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, found: len }.into());
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        unsafe { std::slice::from_raw_parts_mut(out, len) }.copy_from_slice(state.0.coeffs());
        Ok(())
    })
}

/// Norm of a state; `s` is only read for `BL_NORM_HS`.
///
/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bl_state_norm(state: *const BlState, which: BlNorm, s: f64, out: *mut f64) -> BlStatus {
    guard(|| {
        let state = unsafe { deref(state, "state") }?;
        let out = unsafe { out_ptr(out, "out") }?;
        let tag = match which {
            BlNorm::L1 => NormTag::L1,
            BlNorm::L2 => NormTag::L2,
            BlNorm::Linf => NormTag::Linf,
            BlNorm::Hs => NormTag::hs(s)?,
        };
        *out = norm(&state.0, tag);
        Ok(())
    })
}

/// # Safety
/// `state` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bl_state_free(state: *mut BlState) {
    if !state.is_null() {
        drop(unsafe { Box::from_raw(state) });
    }
}

/// State at `t_end` of the stochastic equation driven by the noise of `(seed, member)`.
///
/// # Safety
/// `config` and `u0` must be live handles; `out` as in `bl_config_new`.
#[no_mangle]
pub unsafe extern "C" fn bl_simulate(
    config: *const BlConfig,
    u0: *const BlState,
    t_end: f64,
    seed: u64,
    member: u64,
    out: *mut *mut BlState,
) -> BlStatus {
    guard(|| {
        let config = unsafe { deref(config, "config") }?;
        let u0 = unsafe { deref(u0, "u0") }?;
        let out = unsafe { out_ptr(out, "out") }?;
        let traj = simulate(&u0.0, t_end, &config.0, SeedLineage::new(seed, member), usize::MAX)?;
        *out = boxed(BlState(traj.last().clone()));
        Ok(())
    })
}

/// State at `t_end` of the deterministic equation without control.
///
/// # Safety
/// As for `bl_simulate`.
#[no_mangle]
pub unsafe extern "C" fn bl_simulate_deterministic(
    config: *const BlConfig,
    u0: *const BlState,
    t_end: f64,
    out: *mut *mut BlState,
) -> BlStatus {
    guard(|| {
        let config = unsafe { deref(config, "config") }?;
        let u0 = unsafe { deref(u0, "u0") }?;
        let out = unsafe { out_ptr(out, "out") }?;
        let traj = simulate_controlled(&u0.0, t_end, &config.0, None, usize::MAX)?;
        *out = boxed(BlState(traj.last().clone()));
        Ok(())
    })
}

/// Steady state of the deterministic equation; `residual` may be null.
///
/// # Safety
/// `config` must be a live handle; `out` as in `bl_config_new`.
#[no_mangle]
pub unsafe extern "C" fn bl_steady_state(
    config: *const BlConfig,
    out: *mut *mut BlState,
    residual: *mut f64,
) -> BlStatus {
    guard(|| {
        let config = unsafe { deref(config, "config") }?;
        let out = unsafe { out_ptr(out, "out") }?;
        let ss = steady_state(&config.0)?;
        if let Some(r) = unsafe { residual.as_mut() } {
            *r = ss.residual;
        }
        *out = boxed(BlState(ss.state));
        Ok(())
    })
}

/// Norm of `e^{tνΔ}` from `H^source` to `H^target`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bl_heat_operator_norm(t: f64, nu: f64, source: f64, target: f64, out: *mut f64) -> BlStatus {
    guard(|| {
        let out = unsafe { out_ptr(out, "out") }?;
        *out = heat_operator_norm(t, nu, source, target)?;
        Ok(())
    })
}

/// Writes a state snapshot recording `time`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `state` a live handle.
#[no_mangle]
pub unsafe extern "C" fn bl_snapshot_save(path_ptr: *const c_char, state: *const BlState, time: f64) -> BlStatus {
    guard(|| {
        let p = unsafe { path(path_ptr) }?;
        let state = unsafe { deref(state, "state") }?;
        save_snapshot(&p, &state.0, SnapshotMeta { time, ..Default::default() })?;
        Ok(())
    })
}

/// Reads a state snapshot; `time` may be null.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as in `bl_config_new`.
#[no_mangle]
pub unsafe extern "C" fn bl_snapshot_load(path_ptr: *const c_char, out: *mut *mut BlState, time: *mut f64) -> BlStatus {
    guard(|| {
        let p = unsafe { path(path_ptr) }?;
        let out = unsafe { out_ptr(out, "out") }?;
        let (state, header) = load_snapshot(&p)?;
        if let Some(t) = unsafe { time.as_mut() } {
            *t = header.meta.time;
        }
        *out = boxed(BlState(state));
        Ok(())
    })
}
