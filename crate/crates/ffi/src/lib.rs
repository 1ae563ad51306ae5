//! C ABI over `bertrand-core`.
//!
//! Conventions:
//! - Every fallible call returns a [`BertrandStatus`]; results go through
//!   out-pointers that are written only on success.
//! - On failure the message is kept per thread; read it with
//!   [`bertrand_last_error`].
//! - Objects are opaque handles released by their `_free` function.
//!   Strings handed out by the library are released by
//!   [`bertrand_string_free`].
//! - Panics never cross the boundary; they surface as
//!   [`BertrandStatus::Internal`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bertrand_core::auditor::AuditReport;
use bertrand_core::distributions::{solve_extremal_cce, CceSolution};
use bertrand_core::experiments::{parse_json, AuditConfig, RunConfig, RunOutcome};
use bertrand_core::grid::{bertrand_payoffs, PriceGrid, RealizedProfile};
use bertrand_core::strategy::{Profile, ProfileSpec};
use bertrand_core::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BertrandStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Malformed input: bad JSON, out-of-range value.
    Usage = 3,
    /// Inputs that do not fit together.
    Config = 4,
    /// Construction parameters outside their defined range.
    Construction = 5,
    /// The CCE program could not be solved or certified.
    Solver = 6,
    Io = 7,
    /// A panic inside the library.
    Internal = 8,
}

/// A price grid `{0, 1/K, ..., 1}`.
pub struct BertrandGrid(PriceGrid);

/// A built strategy profile.
pub struct BertrandProfile(Profile);

/// Outcome of one run: metrics, CSV row and optional trace.
pub struct BertrandRun(RunOutcome);

/// An equilibrium audit report.
pub struct BertrandAudit(AuditReport);

/// A solved extremal CCE.
pub struct BertrandCce(CceSolution);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let mut msg = msg.into();
    msg.retain(|c| c != '\0');
    let c = CString::new(msg).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> BertrandStatus {
    match e {
        Error::Config(_) => BertrandStatus::Config,
        Error::Construction(_) => BertrandStatus::Construction,
        Error::Usage(_) | Error::Json(_) | Error::Csv(_) => BertrandStatus::Usage,
        Error::Solver(_) => BertrandStatus::Solver,
        Error::Io { .. } => BertrandStatus::Io,
    }
}

struct Fail(BertrandStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status plus last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BertrandStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BertrandStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal error: {msg}"));
            BertrandStatus::Internal
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(BertrandStatus::NullPointer, format!("`{what}` is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `s` must be null or a NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    non_null(s, what)?;
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| Fail(BertrandStatus::InvalidUtf8, format!("`{what}`: {e}")))
}

fn to_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| Fail(BertrandStatus::Internal, format!("string with interior nul: {e}")))
}

fn to_json(value: &impl serde::Serialize) -> Result<*mut c_char, Fail> {
    let text = serde_json::to_string(value).map_err(Error::from)?;
    to_c_string(text)
}

/// # Safety
/// `out` must be null or valid for one write.
unsafe fn write_out<T>(out: *mut T, value: T) {
    ptr::write(out, value);
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bertrand_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null when the last
/// call succeeded. Valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn bertrand_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn bertrand_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Creates the grid with step `1/k`.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn bertrand_grid_new(k: u32, out: *mut *mut BertrandGrid) -> BertrandStatus {
    guard(|| {
        non_null(out, "out")?;
        let grid = PriceGrid::new(k)?;
        write_out(out, Box::into_raw(Box::new(BertrandGrid(grid))));
        Ok(())
    })
}

/// # Safety
/// `grid` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bertrand_grid_k(grid: *const BertrandGrid) -> u32 {
    grid.as_ref().map_or(0, |g| g.0.k())
}

/// # Safety
/// `grid` must be null or a handle from [`bertrand_grid_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn bertrand_grid_free(grid: *mut BertrandGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// One-shot Bertrand payoffs of `n` posted grid indices: the lowest price
/// wins, ties split. Writes `n` values to `payoffs`.
///
/// # Safety
/// `grid` must be live; `prices` and `payoffs` must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn bertrand_payoffs_of(
    grid: *const BertrandGrid,
    prices: *const u32,
    n: usize,
    payoffs: *mut f64,
) -> BertrandStatus {
    guard(|| {
        non_null(grid, "grid")?;
        non_null(prices, "prices")?;
        non_null(payoffs, "payoffs")?;
        let grid = (*grid).0;
        let prices = std::slice::from_raw_parts(prices, n).to_vec();
        let realized = RealizedProfile::new(grid, prices)?;
        let values = bertrand_payoffs(grid, &realized.0);
        std::slice::from_raw_parts_mut(payoffs, n).copy_from_slice(&values);
        Ok(())
    })
}

/// Builds a profile from its JSON description (tagged by `construction`).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bertrand_profile_from_json(
    json: *const c_char,
    out: *mut *mut BertrandProfile,
) -> BertrandStatus {
    guard(|| {
        non_null(out, "out")?;
        let spec: ProfileSpec = parse_json(read_str(json, "json")?, "profile")?;
        let profile = spec.build()?;
        write_out(out, Box::into_raw(Box::new(BertrandProfile(profile))));
        Ok(())
    })
}

/// Number of seats, or 0 for a null handle.
///
/// # Safety
/// `profile` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn bertrand_profile_players(profile: *const BertrandProfile) -> usize {
    profile.as_ref().map_or(0, |p| p.0.n())
}

/// Grid parameter `K`, or 0 for a null handle.
///
/// # Safety
/// `profile` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn bertrand_profile_k(profile: *const BertrandProfile) -> u32 {
    profile.as_ref().map_or(0, |p| p.0.grid.k())
}

/// # Safety
/// `profile` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn bertrand_profile_free(profile: *mut BertrandProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

/// Executes a run config (the JSON accepted by `bertrand run`).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bertrand_run_from_json(json: *const c_char, out: *mut *mut BertrandRun) -> BertrandStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg: RunConfig = parse_json(read_str(json, "json")?, "run config")?;
        let outcome = cfg.execute()?;
        write_out(out, Box::into_raw(Box::new(BertrandRun(outcome))));
        Ok(())
    })
}

/// Time-averaged expected market price, NaN for a null handle.
///
/// # Safety
/// `run` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn bertrand_run_market_price(run: *const BertrandRun) -> f64 {
    run.as_ref().map_or(f64::NAN, |r| r.0.metrics.market_price)
}

/// Cross-replicate standard error of the market price.
///
/// # Safety
/// `run` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn bertrand_run_stderr(run: *const BertrandRun) -> f64 {
    run.as_ref().map_or(f64::NAN, |r| r.0.metrics.stderr)
}

/// Number of per-seat utilities.
///
/// # Safety
/// `run` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn bertrand_run_players(run: *const BertrandRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.metrics.utilities.len())
}

/// Copies up to `len` per-seat mean utilities into `out` and returns the
/// number of seats.
///
/// # Safety
/// `run` must be live; `out` must hold `len` elements (or be null with
/// `len == 0`).
#[no_mangle]
pub unsafe extern "C" fn bertrand_run_utilities(run: *const BertrandRun, out: *mut f64, len: usize) -> usize {
    let Some(r) = run.as_ref() else { return 0 };
    let u = &r.0.metrics.utilities;
    if !out.is_null() {
        let n = len.min(u.len());
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&u[..n]);
    }
    u.len()
}

/// Run metrics as JSON; release with [`bertrand_string_free`].
///
/// # Safety
/// `run` must be live; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bertrand_run_metrics_json(run: *const BertrandRun, out: *mut *mut c_char) -> BertrandStatus {
    guard(|| {
        non_null(run, "run")?;
        non_null(out, "out")?;
        write_out(out, to_json(&(*run).0.metrics)?);
        Ok(())
    })
}

/// Trace as JSON, or null when the run recorded none.
///
/// # Safety
/// `run` must be live; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bertrand_run_trace_json(run: *const BertrandRun, out: *mut *mut c_char) -> BertrandStatus {
    guard(|| {
        non_null(run, "run")?;
        non_null(out, "out")?;
        let text = match &(*run).0.trace {
            Some(t) => to_json(t)?,
            None => ptr::null_mut(),
        };
        write_out(out, text);
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn bertrand_run_free(run: *mut BertrandRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Audits a profile. Accepts the JSON of `bertrand audit`: either
/// `{"profile": .., "T": ..}` or a bare profile.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bertrand_audit_from_json(json: *const c_char, out: *mut *mut BertrandAudit) -> BertrandStatus {
    guard(|| {
        non_null(out, "out")?;
        let cfg = AuditConfig::from_json(read_str(json, "json")?, "audit config")?;
        let report = cfg.execute()?;
        write_out(out, Box::into_raw(Box::new(BertrandAudit(report))));
        Ok(())
    })
}

/// Certified equilibrium slack (largest per-player gain, floored at 0).
///
/// # Safety
/// `audit` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn bertrand_audit_eq_slack(audit: *const BertrandAudit) -> f64 {
    audit.as_ref().map_or(f64::NAN, |a| a.0.eq_slack)
}

/// The full report as JSON; release with [`bertrand_string_free`].
///
/// # Safety
/// `audit` must be live; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bertrand_audit_json(audit: *const BertrandAudit, out: *mut *mut c_char) -> BertrandStatus {
    guard(|| {
        non_null(audit, "audit")?;
        non_null(out, "out")?;
        write_out(out, to_json(&(*audit).0)?);
        Ok(())
    })
}

/// # Safety
/// `audit` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn bertrand_audit_free(audit: *mut BertrandAudit) {
    if !audit.is_null() {
        drop(Box::from_raw(audit));
    }
}

/// Solves the symmetric CCE of `m` sellers on the `1/k` grid maximizing
/// the expected minimum price.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bertrand_cce_solve(
    m: usize,
    k: u32,
    tolerance: f64,
    out: *mut *mut BertrandCce,
) -> BertrandStatus {
    guard(|| {
        non_null(out, "out")?;
        let sol = solve_extremal_cce(m, PriceGrid::new(k)?, tolerance)?;
        write_out(out, Box::into_raw(Box::new(BertrandCce(sol))));
        Ok(())
    })
}

/// Optimal expected minimum price.
///
/// # Safety
/// `cce` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn bertrand_cce_objective(cce: *const BertrandCce) -> f64 {
    cce.as_ref().map_or(f64::NAN, |c| c.0.objective)
}

/// Re-checks the solution with an independent evaluator.
///
/// # Safety
/// `cce` must be live.
#[no_mangle]
pub unsafe extern "C" fn bertrand_cce_certify(cce: *const BertrandCce, tolerance: f64) -> BertrandStatus {
    guard(|| {
        non_null(cce, "cce")?;
        (*cce).0.certify(tolerance)?;
        Ok(())
    })
}

/// The solution as JSON; release with [`bertrand_string_free`].
///
/// # Safety
/// `cce` must be live; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bertrand_cce_json(cce: *const BertrandCce, out: *mut *mut c_char) -> BertrandStatus {
    guard(|| {
        non_null(cce, "cce")?;
        non_null(out, "out")?;
        write_out(out, to_json(&(*cce).0)?);
        Ok(())
    })
}

/// # Safety
/// `cce` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn bertrand_cce_free(cce: *mut BertrandCce) {
    if !cce.is_null() {
        drop(Box::from_raw(cce));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_set_and_clear_last_error() {
        let mut g = ptr::null_mut();
        let s = unsafe { bertrand_grid_new(0, &mut g) };
        assert_eq!(s, BertrandStatus::Usage);
        assert!(g.is_null());
        let msg = unsafe { CStr::from_ptr(bertrand_last_error()) }.to_str().unwrap();
        assert!(msg.contains("usage"), "{msg}");
        let s = unsafe { bertrand_grid_new(10, &mut g) };
        assert_eq!(s, BertrandStatus::Ok);
        assert!(bertrand_last_error().is_null());
        assert_eq!(unsafe { bertrand_grid_k(g) }, 10);
        unsafe { bertrand_grid_free(g) };
    }

    #[test]
    fn last_error_is_per_thread() {
        let s = unsafe { bertrand_grid_new(1, ptr::null_mut()) };
        assert_eq!(s, BertrandStatus::NullPointer);
        let other = std::thread::spawn(|| bertrand_last_error().is_null()).join().unwrap();
        assert!(other);
        assert!(!bertrand_last_error().is_null());
    }

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::Config("x".into())), BertrandStatus::Config);
        assert_eq!(status_of(&Error::Solver("x".into())), BertrandStatus::Solver);
        assert_eq!(
            status_of(&Error::Construction("x".into())),
            BertrandStatus::Construction
        );
    }

    #[test]
    fn panics_become_internal() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, BertrandStatus::Internal);
        let msg = unsafe { CStr::from_ptr(bertrand_last_error()) }.to_str().unwrap();
        assert!(msg.contains("boom"));
    }

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(bertrand_version()) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}
