//! C ABI over `highway-core`.
//!
//! Every fallible call returns an `HwStatus` code; on failure the message
//! is available from `hw_last_error` on the same thread. Handles are
//! opaque and owned by the caller until passed to their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use highway_core::check::{check, Verdict};
use highway_core::finality::final_predicate;
use highway_core::ids::ValidatorId;
use highway_core::scenario::Scenario;
use highway_core::sim::{self, Outcome, Trace};

/// Status codes returned by every fallible function.
#[repr(i32)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HwStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Io = 4,
    OutOfRange = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// A parsed scenario.
pub struct HwScenario(Scenario);

/// A finished simulation with its trace kept in memory.
pub struct HwRun(Outcome);

/// The result of replaying a trace.
pub struct HwVerdict(Verdict);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: HwStatus, msg: impl ToString) -> HwStatus {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
    status
}

fn guard(f: impl FnOnce() -> Result<(), HwStatus>) -> HwStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HwStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(HwStatus::Panic, "internal panic"),
    }
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, HwStatus> {
    if p.is_null() {
        return Err(fail(HwStatus::NullArgument, "null string"));
    }
    CStr::from_ptr(p).to_str().map_err(|e| fail(HwStatus::InvalidUtf8, e))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, HwStatus> {
    p.as_ref().ok_or_else(|| fail(HwStatus::NullArgument, "null handle"))
}

unsafe fn slot<'a, T>(p: *mut T) -> Result<&'a mut T, HwStatus> {
    p.as_mut().ok_or_else(|| fail(HwStatus::NullArgument, "null output pointer"))
}

/// Copies `s` plus a terminating NUL into `buf`. `needed` receives the
/// required size including the NUL, even when the buffer is too small.
unsafe fn copy_out(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), HwStatus> {
    if !needed.is_null() {
        *needed = s.len() + 1;
    }
    if buf.is_null() || len < s.len() + 1 {
        return Err(fail(HwStatus::BufferTooSmall, format!("need {} bytes", s.len() + 1)));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Message for the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hw_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn hw_status_str(status: i32) -> *const c_char {
    let s: &CStr = match status {
        0 => c"ok",
        1 => c"null argument",
        2 => c"invalid UTF-8",
        3 => c"parse error",
        4 => c"I/O error",
        5 => c"out of range",
        6 => c"buffer too small",
        7 => c"panic",
        _ => c"unknown status",
    };
    s.as_ptr()
}

/// `(2q - n)(1 - 2^-k) > t`, evaluated exactly.
#[no_mangle]
pub extern "C" fn hw_final_predicate(n: u64, q: u64, k: u32, t: u64) -> bool {
    final_predicate(n, q, k, t)
}

/// Parses scenario text. On success `*out` owns a new handle.
///
/// # Safety
/// `src` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hw_scenario_parse(src: *const c_char, out: *mut *mut HwScenario) -> HwStatus {
    guard(|| {
        let slot = slot(out)?;
        *slot = ptr::null_mut();
        let s = Scenario::parse(text(src)?).map_err(|e| fail(HwStatus::Parse, e))?;
        *slot = Box::into_raw(Box::new(HwScenario(s)));
        Ok(())
    })
}

/// # Safety
/// `s` must come from `hw_scenario_parse` and not be freed already.
#[no_mangle]
pub unsafe extern "C" fn hw_scenario_set_seed(s: *mut HwScenario, seed: u64) -> HwStatus {
    guard(|| {
        slot(s)?.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or come from `hw_scenario_parse`.
#[no_mangle]
pub unsafe extern "C" fn hw_scenario_free(s: *mut HwScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Simulates the scenario to its horizon.
///
/// # Safety
/// `s` must be a live scenario handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hw_run(s: *const HwScenario, out: *mut *mut HwRun) -> HwStatus {
    guard(|| {
        let slot = slot(out)?;
        *slot = ptr::null_mut();
        let o = sim::run_kept(&handle(s)?.0);
        *slot = Box::into_raw(Box::new(HwRun(o)));
        Ok(())
    })
}

/// Hex SHA-256 digest of the trace (64 characters plus NUL).
///
/// # Safety
/// `r` must be a live run handle; `buf` must hold `len` bytes; `needed`
/// may be NULL.
#[no_mangle]
pub unsafe extern "C" fn hw_run_digest(r: *const HwRun, buf: *mut c_char, len: usize, needed: *mut usize) -> HwStatus {
    guard(|| copy_out(&handle(r)?.0.digest, buf, len, needed))
}

/// Writes the trace file.
///
/// # Safety
/// `r` must be a live run handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hw_run_write_trace(r: *const HwRun, path: *const c_char) -> HwStatus {
    guard(|| {
        let o = &handle(r)?.0;
        let path = text(path)?;
        let mut body = o.trace.join("\n");
        body.push('\n');
        std::fs::write(path, body).map_err(|e| fail(HwStatus::Io, format!("{path}: {e}")))
    })
}

/// Height of the last block `validator` finalized at `threshold`.
///
/// # Safety
/// `r` must be a live run handle and `height` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hw_run_chain_height(
    r: *const HwRun,
    validator: u32,
    threshold: u64,
    height: *mut u64,
) -> HwStatus {
    guard(|| {
        let o = &handle(r)?.0;
        let slot = slot(height)?;
        let chain = o
            .validator(ValidatorId(validator))
            .and_then(|v| v.chain(threshold))
            .ok_or_else(|| fail(HwStatus::OutOfRange, format!("no chain for v{validator} at t={threshold}")))?;
        *slot = chain.last().map_or(0, |(_, h)| *h);
        Ok(())
    })
}

/// # Safety
/// `r` must be NULL or come from `hw_run`.
#[no_mangle]
pub unsafe extern "C" fn hw_run_free(r: *mut HwRun) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Replays a trace file at the given thresholds.
///
/// # Safety
/// `path` must be a NUL-terminated string, `thresholds` must point to
/// `count` values, and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hw_check_trace(
    path: *const c_char,
    thresholds: *const u64,
    count: usize,
    out: *mut *mut HwVerdict,
) -> HwStatus {
    guard(|| {
        let slot = slot(out)?;
        *slot = ptr::null_mut();
        let path = text(path)?;
        if thresholds.is_null() || count == 0 {
            return Err(fail(HwStatus::NullArgument, "need at least one threshold"));
        }
        let ts = std::slice::from_raw_parts(thresholds, count);
        let f = std::fs::File::open(path).map_err(|e| fail(HwStatus::Io, format!("{path}: {e}")))?;
        let trace = Trace::read(std::io::BufReader::new(f)).map_err(|e| fail(HwStatus::Parse, e))?;
        let v = check(&trace, ts).map_err(|e| fail(HwStatus::Parse, e))?;
        *slot = Box::into_raw(Box::new(HwVerdict(v)));
        Ok(())
    })
}

/// True when no pair of honest chains conflicts beyond what the observed
/// equivocation weight permits.
///
/// # Safety
/// `v` must be a live verdict handle and `clean` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hw_verdict_is_clean(v: *const HwVerdict, clean: *mut bool) -> HwStatus {
    guard(|| {
        *slot(clean)? = handle(v)?.0.is_clean();
        Ok(())
    })
}

/// Number of conflicting chain pairs, permitted or not.
///
/// # Safety
/// `v` must be a live verdict handle and `count` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hw_verdict_conflicts(v: *const HwVerdict, count: *mut usize) -> HwStatus {
    guard(|| {
        *slot(count)? = handle(v)?.0.conflicts.len();
        Ok(())
    })
}

/// Number of validators whose lower-threshold chain fails to extend a
/// higher-threshold one.
///
/// # Safety
/// `v` must be a live verdict handle and `count` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hw_verdict_order_violations(v: *const HwVerdict, count: *mut usize) -> HwStatus {
    guard(|| {
        *slot(count)? = handle(v)?.0.order_violations.len();
        Ok(())
    })
}

/// Height of `validator`'s replayed chain at `threshold`.
///
/// # Safety
/// `v` must be a live verdict handle and `height` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hw_verdict_chain_height(
    v: *const HwVerdict,
    validator: u32,
    threshold: u64,
    height: *mut u64,
) -> HwStatus {
    guard(|| {
        let verdict = &handle(v)?.0;
        let slot = slot(height)?;
        let chain = verdict
            .chain(ValidatorId(validator), threshold)
            .ok_or_else(|| fail(HwStatus::OutOfRange, format!("no chain for v{validator} at t={threshold}")))?;
        *slot = chain.last().map_or(0, |(_, h)| *h);
        Ok(())
    })
}

/// JSON rendering of the verdict, copied like `hw_run_digest`.
///
/// # Safety
/// As for `hw_run_digest`.
#[no_mangle]
pub unsafe extern "C" fn hw_verdict_json(
    v: *const HwVerdict,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> HwStatus {
    guard(|| {
        let json = serde_json::to_string(&handle(v)?.0).map_err(|e| fail(HwStatus::Parse, e))?;
        copy_out(&json, buf, len, needed)
    })
}

/// # Safety
/// `v` must be NULL or come from `hw_check_trace`.
#[no_mangle]
pub unsafe extern "C" fn hw_verdict_free(v: *mut HwVerdict) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}
