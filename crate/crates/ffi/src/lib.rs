//! C interface to the replibandit simulator.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `rb_*_free`. Every fallible call returns an [`Status`]
//! and leaves a message for [`rb_last_error_message`] on failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use replibandit::config::{apply_overrides, parse_config, preset, to_json, ExperimentConfig};
use replibandit::harness::{resolve_theta_star, run_replications, ReplicationSummary};
use replibandit::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    NullPointer = 1,
    InvalidConfig = 2,
    InvalidArgument = 3,
    Simulation = 4,
    Io = 5,
    Panic = 6,
}

/// Experiment configuration.
pub struct Config(ExperimentConfig);

/// Result of a replication study.
pub struct Summary(ReplicationSummary);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> Status {
    match err.kind() {
        "config" | "parse" | "json" => Status::InvalidConfig,
        "domain" => Status::InvalidArgument,
        "io" | "csv" => Status::Io,
        _ => Status::Simulation,
    }
}

struct Fail(Status, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> Status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            Status::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            Status::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(Status::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(Status::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out_string(s: String, out: *mut *mut c_char) -> Result<(), Fail> {
    let c = CString::new(s).map_err(|_| Fail(Status::InvalidArgument, "interior NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn rb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static library version string.
#[no_mangle]
pub extern "C" fn rb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rb_config_from_preset(name: *const c_char, out: *mut *mut Config) -> Status {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = preset(str_arg(name, "name")?)?;
        *out = Box::into_raw(Box::new(Config(cfg)));
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rb_config_from_json(json: *const c_char, out: *mut *mut Config) -> Status {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = parse_config(str_arg(json, "json")?, "<ffi>")?;
        *out = Box::into_raw(Box::new(Config(cfg)));
        Ok(())
    })
}

/// Sets a dotted key, e.g. `"n"` to `"1000"`. The config is unchanged on failure.
///
/// # Safety
/// `cfg` must come from `rb_config_from_*`; strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rb_config_set(cfg: *mut Config, key: *const c_char, value: *const c_char) -> Status {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let pair = format!("{}={}", str_arg(key, "key")?, str_arg(value, "value")?);
        cfg.0 = apply_overrides(&cfg.0, &[pair])?;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be valid; free the result with `rb_string_free`.
#[no_mangle]
pub unsafe extern "C" fn rb_config_to_json(cfg: *const Config, out: *mut *mut c_char) -> Status {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        out_string(to_json(&cfg.0)?, out)
    })
}

/// # Safety
/// `cfg` must come from `rb_config_from_*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rb_config_free(cfg: *mut Config) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs every replication. `threads` = 0 uses all cores; results do not
/// depend on it.
///
/// # Safety
/// `cfg` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rb_replicate(cfg: *const Config, threads: u32, out: *mut *mut Summary) -> Status {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let star = resolve_theta_star(&cfg.0, threads as usize)?;
        let summary = run_replications(&cfg.0, &star, threads as usize, None)?;
        *out = Box::into_raw(Box::new(Summary(summary)));
        Ok(())
    })
}

/// Number of replications, 0 for NULL.
///
/// # Safety
/// `s` must be valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn rb_summary_reps(s: *const Summary) -> usize {
    s.as_ref().map_or(0, |s| s.0.theta_hat.len())
}

/// Writes mean θ̂ and the empirical variance.
///
/// # Safety
/// `s` must be valid; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rb_summary_moments(s: *const Summary, mean: *mut f64, variance: *mut f64) -> Status {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("summary"))?;
        if mean.is_null() || variance.is_null() {
            return Err(null("output"));
        }
        *mean = s.0.mean_theta_hat;
        *variance = s.0.empirical_variance;
        Ok(())
    })
}

/// Copies up to `len` per-replication estimates into `buf`; `written` gets the count.
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rb_summary_theta_hat(
    s: *const Summary,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> Status {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("summary"))?;
        if buf.is_null() || written.is_null() {
            return Err(null("output"));
        }
        let k = len.min(s.0.theta_hat.len());
        ptr::copy_nonoverlapping(s.0.theta_hat.as_ptr(), buf, k);
        *written = k;
        Ok(())
    })
}

/// Summary as the JSON written by the command line tool.
///
/// # Safety
/// `s` must be valid; free the result with `rb_string_free`.
#[no_mangle]
pub unsafe extern "C" fn rb_summary_to_json(s: *const Summary, out: *mut *mut c_char) -> Status {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("summary"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let json = serde_json::to_string_pretty(&s.0).map_err(Error::from)?;
        out_string(json, out)
    })
}

/// # Safety
/// `s` must come from `rb_replicate` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rb_summary_free(s: *mut Summary) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// # Safety
/// `s` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn rb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
