//! C interface to `jdgop`.
//!
//! Markets are opaque handles created from JSON and released with
//! [`jd_market_free`]. Every fallible call returns a [`JdStatus`]; on failure
//! [`jd_last_error_message`] describes the error for the calling thread.
//! Output arrays are caller-allocated and their lengths are checked.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use jdgop::deflator::{analytic_deflator_expectation, solve_unique_deflator, Equivalence};
use jdgop::gop::{growth_rate, solve_gop_piece};
use jdgop::market::{classify_regime, validate_market, MarketRegime};
use jdgop::mc::{estimate_terminal_expectation, Functional, McConfig, Verdict};
use jdgop::scenario::{run, Scenario};
use jdgop::{Error, MarketSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Structure = 4,
    IllConditioned = 5,
    NoGop = 6,
    Inadmissible = 7,
    UnsupportedConstraint = 8,
    InvalidArgument = 9,
    HighVariance = 10,
    Io = 11,
    BufferTooSmall = 12,
    InvalidMarket = 13,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JdRegime {
    Martingale = 0,
    StrictSupermartingale = 1,
    GopNonexistent = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JdEquivalence {
    Equivalent = 0,
    AbsolutelyContinuousOnly = 1,
    NotEquivalent = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JdVerdict {
    ConsistentWithMartingale = 0,
    StrictSupermartingale = 1,
    Inconclusive = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JdMcResult {
    pub mean: f64,
    pub std_error: f64,
    pub reference: f64,
    pub verdict: JdVerdict,
}

/// Opaque market handle.
pub struct JdMarket {
    spec: MarketSpec,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> JdStatus {
    match err {
        Error::Parse { .. } | Error::Json(_) => JdStatus::Parse,
        Error::Structure(_) => JdStatus::Structure,
        Error::IllConditioned { .. } => JdStatus::IllConditioned,
        Error::NoGop { .. } => JdStatus::NoGop,
        Error::InadmissibleVolatility { .. } | Error::InadmissibleStrategy { .. } => {
            JdStatus::Inadmissible
        }
        Error::UnsupportedConstraint { .. } | Error::InvalidCap(_) => {
            JdStatus::UnsupportedConstraint
        }
        Error::HighVariance { .. } => JdStatus::HighVariance,
        Error::InvalidMarket(_) => JdStatus::InvalidMarket,
        Error::InvalidArgument(_) => JdStatus::InvalidArgument,
        Error::Io { .. } => JdStatus::Io,
    }
}

enum Failure {
    Status(JdStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn fail(status: JdStatus, msg: impl Into<String>) -> Failure {
    Failure::Status(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> JdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => JdStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            JdStatus::Panic
        }
    }
}

unsafe fn market<'a>(handle: *const JdMarket) -> Result<&'a MarketSpec, Failure> {
    handle
        .as_ref()
        .map(|m| &m.spec)
        .ok_or_else(|| fail(JdStatus::NullPointer, "null market handle"))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(JdStatus::NullPointer, format!("null {what}")))
}

unsafe fn out_slice<'a>(
    p: *mut f64,
    len: usize,
    need: usize,
    what: &str,
) -> Result<&'a mut [f64], Failure> {
    if len < need {
        return Err(fail(
            JdStatus::BufferTooSmall,
            format!("{what} needs {need} entries, got {len}"),
        ));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(JdStatus::NullPointer, format!("null {what}")));
    }
    Ok(slice::from_raw_parts_mut(p, need))
}

unsafe fn in_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(JdStatus::NullPointer, format!("null {what}")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn in_str<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(JdStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(JdStatus::InvalidUtf8, e.to_string()))
}

fn check_piece(spec: &MarketSpec, piece: usize) -> Result<(), Failure> {
    if piece >= spec.pieces.len() {
        return Err(fail(
            JdStatus::InvalidArgument,
            format!("piece {piece} out of range ({} pieces)", spec.pieces.len()),
        ));
    }
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn jd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses a market from JSON. Release the handle with `jd_market_free`.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn jd_market_from_json(
    json: *const c_char,
    out: *mut *mut JdMarket,
) -> JdStatus {
    guard(|| {
        let out = out_ref(out, "output handle")?;
        *out = ptr::null_mut();
        let spec = MarketSpec::from_json_str(in_str(json)?)?;
        *out = Box::into_raw(Box::new(JdMarket { spec }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from `jd_market_from_json` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn jd_market_free(handle: *mut JdMarket) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// # Safety
/// Pointers must be valid; any output pointer may be null to skip it.
#[no_mangle]
pub unsafe extern "C" fn jd_market_dims(
    handle: *const JdMarket,
    d: *mut usize,
    m: *mut usize,
    pieces: *mut usize,
) -> JdStatus {
    guard(|| {
        let spec = market(handle)?;
        for (p, v) in [(d, spec.d), (m, spec.m), (pieces, spec.pieces.len())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Sets `valid` to whether the market satisfies the modelling assumptions.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jd_market_validate(handle: *const JdMarket, valid: *mut bool) -> JdStatus {
    guard(|| {
        let report = validate_market(market(handle)?)?;
        *out_ref(valid, "output flag")? = report.valid;
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jd_market_regime(
    handle: *const JdMarket,
    regime: *mut JdRegime,
) -> JdStatus {
    guard(|| {
        let report = classify_regime(market(handle)?)?;
        *out_ref(regime, "output regime")? = match report.overall {
            MarketRegime::Martingale => JdRegime::Martingale,
            MarketRegime::StrictSupermartingale => JdRegime::StrictSupermartingale,
            MarketRegime::GopNonexistent => JdRegime::GopNonexistent,
        };
        Ok(())
    })
}

/// Writes the `d` entries of the market price of risk on `piece`.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn jd_market_price_of_risk(
    handle: *const JdMarket,
    piece: usize,
    out: *mut f64,
    len: usize,
) -> JdStatus {
    guard(|| {
        let spec = market(handle)?;
        check_piece(spec, piece)?;
        let theta = spec.market_price_of_risk(piece)?;
        out_slice(out, len, theta.len(), "output array")?.copy_from_slice(&theta);
        Ok(())
    })
}

/// Growth optimal fractions and volatilities (`d` entries each) and the
/// optimal growth rate on `piece`. Any output may be null to skip it.
///
/// # Safety
/// Non-null arrays must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn jd_gop_solve(
    handle: *const JdMarket,
    piece: usize,
    fractions: *mut f64,
    volatilities: *mut f64,
    len: usize,
    g_star: *mut f64,
) -> JdStatus {
    guard(|| {
        let spec = market(handle)?;
        check_piece(spec, piece)?;
        let gop = solve_gop_piece(spec, piece)?;
        if !fractions.is_null() {
            out_slice(fractions, len, spec.d, "fractions")?.copy_from_slice(&gop.pi_star);
        }
        if !volatilities.is_null() {
            out_slice(volatilities, len, spec.d, "volatilities")?.copy_from_slice(&gop.c_star);
        }
        if let Some(g) = g_star.as_mut() {
            *g = gop.g_star;
        }
        Ok(())
    })
}

/// Growth rate of portfolio volatilities `c` given `theta` (both length
/// `d`), `n_jumps` intensities and short rate `r`.
///
/// # Safety
/// Arrays must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn jd_growth_rate(
    c: *const f64,
    theta: *const f64,
    d: usize,
    lambda: *const f64,
    n_jumps: usize,
    r: f64,
    out: *mut f64,
) -> JdStatus {
    guard(|| {
        let g = growth_rate(
            in_slice(c, d, "volatilities")?,
            in_slice(theta, d, "theta")?,
            in_slice(lambda, n_jumps, "intensities")?,
            r,
        )?;
        *out_ref(out, "output")? = g.total;
        Ok(())
    })
}

/// Measure-change coefficients on `piece`: `m` diffusive multipliers and
/// `d - m` jump multipliers.
///
/// # Safety
/// Arrays must hold the stated number of doubles; other outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn jd_deflator_solve(
    handle: *const JdMarket,
    piece: usize,
    phi: *mut f64,
    phi_len: usize,
    psi: *mut f64,
    psi_len: usize,
    residual: *mut f64,
    equivalence: *mut JdEquivalence,
) -> JdStatus {
    guard(|| {
        let spec = market(handle)?;
        check_piece(spec, piece)?;
        let sol = solve_unique_deflator(spec, piece)?;
        out_slice(phi, phi_len, sol.phi.len(), "phi")?.copy_from_slice(&sol.phi);
        out_slice(psi, psi_len, sol.psi_rn.len(), "psi")?.copy_from_slice(&sol.psi_rn);
        if let Some(r) = residual.as_mut() {
            *r = sol.residual;
        }
        if let Some(e) = equivalence.as_mut() {
            *e = match sol.equivalence {
                Equivalence::Equivalent => JdEquivalence::Equivalent,
                Equivalence::AbsolutelyContinuousOnly => JdEquivalence::AbsolutelyContinuousOnly,
                Equivalence::NotEquivalent => JdEquivalence::NotEquivalent,
            };
        }
        Ok(())
    })
}

/// Closed-form `E[Z_t]` of the inverse discounted GOP.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jd_deflator_expectation(
    handle: *const JdMarket,
    t: f64,
    out: *mut f64,
) -> JdStatus {
    guard(|| {
        let e = analytic_deflator_expectation(market(handle)?, t)?;
        *out_ref(out, "output")? = e.value;
        Ok(())
    })
}

/// Monte Carlo estimate of `E[Z_t]` with its verdict.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn jd_test_martingale(
    handle: *const JdMarket,
    t: f64,
    n_paths: usize,
    seed: u64,
    out: *mut JdMcResult,
) -> JdStatus {
    guard(|| {
        let spec = market(handle)?;
        let out = out_ref(out, "output")?;
        let r = estimate_terminal_expectation(
            spec,
            &Functional::Deflator,
            t,
            &McConfig::new(n_paths, seed),
        )?;
        *out = JdMcResult {
            mean: r.estimate.mean,
            std_error: r.estimate.std_error,
            reference: r.reference.unwrap_or(f64::NAN),
            verdict: match r.verdict {
                Verdict::ConsistentWithMartingale => JdVerdict::ConsistentWithMartingale,
                Verdict::StrictSupermartingale => JdVerdict::StrictSupermartingale,
                Verdict::Inconclusive => JdVerdict::Inconclusive,
            },
        };
        Ok(())
    })
}

/// Runs a scenario given as JSON and returns its JSON report, to be released
/// with `jd_string_free`.
///
/// # Safety
/// `json` must be a nul-terminated string and `report` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn jd_run_scenario_json(
    json: *const c_char,
    report: *mut *mut c_char,
) -> JdStatus {
    guard(|| {
        let report = out_ref(report, "output string")?;
        *report = ptr::null_mut();
        let scenario = Scenario::from_json_str(in_str(json)?)?;
        let text = run(&scenario)?.to_json_pretty();
        *report = CString::new(text).expect("JSON has no nul").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn jd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
