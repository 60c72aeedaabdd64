//! C interface to the precswitch schedule synthesizer.
//!
//! Configurations and schedules cross the boundary as opaque handles that
//! the caller releases with the matching `_free` function. Every fallible
//! call returns a [`PrecswitchStatus`]; on failure the message is available
//! from [`precswitch_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use precswitch::config::{ConfigError, RunConfig};
use precswitch::io::ScheduleFile;
use precswitch::precision::Precision;
use precswitch::schedule::{
    switching_windows, synthesize_schedule, verify_schedule, EmulatedCheck, ScheduleError,
    VerificationReport,
};
use precswitch::solver::SolveStatus;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecswitchStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Config = 4,
    Format = 5,
    /// No schedule keeps the output inside the band.
    Infeasible = 6,
    /// The node limit was hit before any feasible schedule was found.
    LimitWithoutIncumbent = 7,
    /// The output buffer is smaller than the reported count.
    BufferTooSmall = 8,
    Internal = 9,
    Panic = 10,
}

/// How the branch-and-bound search ended.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecswitchSolveStatus {
    /// Parsed schedule without a status line.
    Unknown = 0,
    Optimal = 1,
    GapLimit = 2,
    NodeLimit = 3,
    Infeasible = 4,
}

/// Outcome of the bit-accurate emulation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecswitchEmulation {
    Passed = 0,
    Violated = 1,
    NonFinite = 2,
}

/// Verification of a schedule against the error-bounded model and emulation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrecswitchReport {
    pub model_passed: bool,
    /// First sample outside the band in the model, or -1.
    pub model_violation_sample: i64,
    pub emulation: PrecswitchEmulation,
    /// First offending emulated sample, or -1 when the emulation passed.
    pub emulation_sample: i64,
    pub model_cost: f64,
    pub emulated_cost: f64,
    pub runtime: f64,
    pub objective: f64,
    pub switches: usize,
    pub lo_fraction: f64,
}

/// Parsed run configuration.
pub struct PrecswitchConfig {
    inner: RunConfig,
}

/// A precision schedule with its solver summary.
pub struct PrecswitchSchedule {
    file: ScheduleFile,
}

struct Failure {
    status: PrecswitchStatus,
    message: String,
}

impl Failure {
    fn new(status: PrecswitchStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let status = match e {
            ConfigError::Io { .. } => PrecswitchStatus::Io,
            _ => PrecswitchStatus::Config,
        };
        let message = match &e {
            ConfigError::Invalid(d) => d
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("; "),
            other => other.to_string(),
        };
        Self::new(status, message)
    }
}

impl From<ScheduleError> for Failure {
    fn from(e: ScheduleError) -> Self {
        let status = match e {
            ScheduleError::NoFeasibleSchedule { .. } => PrecswitchStatus::Infeasible,
            ScheduleError::LimitWithoutIncumbent { .. } => PrecswitchStatus::LimitWithoutIncumbent,
            ScheduleError::Malformed(_) => PrecswitchStatus::Format,
            _ => PrecswitchStatus::Internal,
        };
        Self::new(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, records its failure and converts panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PrecswitchStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PrecswitchStatus::Ok,
        Ok(Err(f)) => {
            set_last_error(&f.message);
            f.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&msg);
            PrecswitchStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure::new(PrecswitchStatus::NullArgument, format!("{name} is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure::new(PrecswitchStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

/// Writes `values` into `buf`, which may be NULL when `capacity` is 0.
unsafe fn fill<T: Copy>(
    values: &[T],
    buf: *mut T,
    capacity: usize,
    count: *mut usize,
) -> Result<(), Failure> {
    *out_arg(count, "count")? = values.len();
    if capacity < values.len() {
        return Err(Failure::new(
            PrecswitchStatus::BufferTooSmall,
            format!("{} entries needed, capacity {capacity}", values.len()),
        ));
    }
    if !values.is_empty() {
        if buf.is_null() {
            return Err(null("buffer"));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    }
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn precswitch_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Reads a JSON run configuration from a file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn precswitch_config_from_path(
    path: *const c_char,
    out: *mut *mut PrecswitchConfig,
) -> PrecswitchStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let inner = RunConfig::from_path(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(PrecswitchConfig { inner }));
        Ok(())
    })
}

/// Parses a JSON run configuration held in memory.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn precswitch_config_from_json(
    json: *const c_char,
    out: *mut *mut PrecswitchConfig,
) -> PrecswitchStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let inner = RunConfig::from_json_str(str_arg(json, "json")?)?;
        *out = Box::into_raw(Box::new(PrecswitchConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `config` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn precswitch_config_free(config: *mut PrecswitchConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Switching windows as inclusive sample ranges. `count` receives the
/// window count even when the buffers are too small.
///
/// # Safety
/// `starts` and `ends` must hold `capacity` entries (or be NULL with
/// capacity 0); `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn precswitch_windows(
    config: *const PrecswitchConfig,
    starts: *mut usize,
    ends: *mut usize,
    capacity: usize,
    count: *mut usize,
) -> PrecswitchStatus {
    guard(|| {
        let cfg = &ref_arg(config, "config")?.inner;
        let metrics = cfg.timing_metrics().map_err(Failure::from)?;
        let windows =
            switching_windows(&cfg.system, &cfg.scenario, &metrics).map_err(Failure::from)?;
        let (s, e): (Vec<usize>, Vec<usize>) = windows.windows.iter().copied().unzip();
        fill(&s, starts, capacity, count)?;
        fill(&e, ends, capacity, count)
    })
}

/// Synthesizes the optimal schedule. A schedule is returned on node-limit
/// exits too; check [`precswitch_schedule_solve_status`].
///
/// # Safety
/// `config` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn precswitch_synthesize(
    config: *const PrecswitchConfig,
    out: *mut *mut PrecswitchSchedule,
) -> PrecswitchStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = &ref_arg(config, "config")?.inner;
        let metrics = cfg.timing_metrics().map_err(Failure::from)?;
        let syn = synthesize_schedule(&cfg.system, &cfg.scenario, Some(metrics), &cfg.options)?;
        let file = ScheduleFile {
            schedule: syn.schedule,
            mu: Some(syn.windows.mu()),
            gap: Some(syn.solution.gap),
            objective: Some(syn.solution.objective),
            status: Some(syn.solution.status),
        };
        *out = Box::into_raw(Box::new(PrecswitchSchedule { file }));
        Ok(())
    })
}

/// Parses the text schedule format.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn precswitch_schedule_parse(
    text: *const c_char,
    out: *mut *mut PrecswitchSchedule,
) -> PrecswitchStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let file = ScheduleFile::parse(str_arg(text, "text")?)
            .map_err(|e| Failure::new(PrecswitchStatus::Format, e.to_string()))?;
        *out = Box::into_raw(Box::new(PrecswitchSchedule { file }));
        Ok(())
    })
}

/// The schedule in the text format, to be released with
/// [`precswitch_string_free`]. NULL when `schedule` is NULL.
///
/// # Safety
/// `schedule` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn precswitch_schedule_to_text(
    schedule: *const PrecswitchSchedule,
) -> *mut c_char {
    match schedule.as_ref() {
        Some(s) => CString::new(s.file.to_text()).map_or(ptr::null_mut(), CString::into_raw),
        None => ptr::null_mut(),
    }
}

/// # Safety
/// `s` must be NULL or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn precswitch_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Precision per sample `0..=N`, 1 for hi and 0 for lo.
///
/// # Safety
/// `levels` must hold `capacity` bytes (or be NULL with capacity 0);
/// `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn precswitch_schedule_levels(
    schedule: *const PrecswitchSchedule,
    levels: *mut u8,
    capacity: usize,
    count: *mut usize,
) -> PrecswitchStatus {
    guard(|| {
        let s = ref_arg(schedule, "schedule")?;
        let v: Vec<u8> = s
            .file
            .schedule
            .precisions()
            .iter()
            .map(|&p| u8::from(p == Precision::Hi))
            .collect();
        fill(&v, levels, capacity, count)
    })
}

/// Number of precision changes, or 0 for NULL.
///
/// # Safety
/// `schedule` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn precswitch_schedule_switch_count(
    schedule: *const PrecswitchSchedule,
) -> usize {
    schedule
        .as_ref()
        .map_or(0, |s| s.file.schedule.switch_count())
}

/// Solver objective, NaN when unknown.
///
/// # Safety
/// `schedule` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn precswitch_schedule_objective(schedule: *const PrecswitchSchedule) -> f64 {
    schedule
        .as_ref()
        .and_then(|s| s.file.objective)
        .unwrap_or(f64::NAN)
}

/// # Safety
/// `schedule` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn precswitch_schedule_solve_status(
    schedule: *const PrecswitchSchedule,
) -> PrecswitchSolveStatus {
    match schedule.as_ref().and_then(|s| s.file.status) {
        None => PrecswitchSolveStatus::Unknown,
        Some(SolveStatus::Optimal) => PrecswitchSolveStatus::Optimal,
        Some(SolveStatus::GapLimit) => PrecswitchSolveStatus::GapLimit,
        Some(SolveStatus::NodeLimit) => PrecswitchSolveStatus::NodeLimit,
        Some(SolveStatus::Infeasible) => PrecswitchSolveStatus::Infeasible,
    }
}

/// # Safety
/// `schedule` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn precswitch_schedule_free(schedule: *mut PrecswitchSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

fn sample(s: Option<usize>) -> i64 {
    s.map_or(-1, |s| s as i64)
}

fn report(r: &VerificationReport) -> PrecswitchReport {
    let (emulation, emulation_sample) = match &r.emulated {
        EmulatedCheck::Passed => (PrecswitchEmulation::Passed, -1),
        EmulatedCheck::Violated { violation } => (
            PrecswitchEmulation::Violated,
            sample(Some(violation.sample)),
        ),
        EmulatedCheck::NonFinite { sample: k } => {
            (PrecswitchEmulation::NonFinite, sample(Some(*k)))
        }
    };
    PrecswitchReport {
        model_passed: r.model_passed(),
        model_violation_sample: sample(r.model_violation.as_ref().map(|v| v.sample)),
        emulation,
        emulation_sample,
        model_cost: r.model_cost.value(),
        emulated_cost: r.emulated_cost.value(),
        runtime: r.runtime,
        objective: r.objective,
        switches: r.switches,
        lo_fraction: r.lo_fraction,
    }
}

/// Checks a schedule in the error-bounded model and in bit-accurate
/// emulation of both formats.
///
/// # Safety
/// `config` and `schedule` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn precswitch_verify(
    config: *const PrecswitchConfig,
    schedule: *const PrecswitchSchedule,
    out: *mut PrecswitchReport,
) -> PrecswitchStatus {
    guard(|| {
        let cfg = &ref_arg(config, "config")?.inner;
        let s = ref_arg(schedule, "schedule")?;
        let out = out_arg(out, "out")?;
        let r = verify_schedule(
            &s.file.schedule,
            &cfg.system,
            &cfg.scenario,
            &cfg.options.model,
            cfg.formats,
        )?;
        *out = report(&r);
        Ok(())
    })
}
