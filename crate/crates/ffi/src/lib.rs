//! C ABI over the `mcchannel` toolkit.
//!
//! Conventions:
//!
//! * every fallible call returns an [`McStatus`]; `MC_STATUS_OK` is zero;
//! * results are written through out-pointers, which are left untouched on
//!   failure;
//! * traces and simulation results are opaque handles, released with
//!   [`mc_trace_free`] and [`mc_simulation_free`];
//! * strings returned by the library are freed with [`mc_string_free`];
//! * after a failure, [`mc_last_error_message`] describes it. The message is
//!   stored per thread.
//!
//! Panics never cross the boundary; they surface as `MC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mcchannel::channel::{self, DiffusionParams, VerticalChannelParams};
use mcchannel::fit::{self, FitConfig, FitResult, Termination};
use mcchannel::sim::{self, ConcentrationProfile, SimConfig};
use mcchannel::trace::{self, TimeSeries, TraceMeta};
use mcchannel::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Domain = 3,
    Parse = 4,
    EmptyTrace = 5,
    Degenerate = 6,
    OutOfSpan = 7,
    GridMismatch = 8,
    TooFewSamples = 9,
    NoConvergence = 10,
    Io = 11,
    InvalidUtf8 = 12,
    Json = 13,
    IndexOutOfRange = 14,
    Panic = 15,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(McStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidParameter { .. } | Error::Average(_) => McStatus::InvalidParameter,
            Error::Domain { .. } => McStatus::Domain,
            Error::Parse { .. } => McStatus::Parse,
            Error::EmptyTrace | Error::EmptyWindow { .. } => McStatus::EmptyTrace,
            Error::Degenerate(_) => McStatus::Degenerate,
            Error::OutOfSpan { .. } => McStatus::OutOfSpan,
            Error::GridMismatch(_) => McStatus::GridMismatch,
            Error::TooFewSamples { .. } => McStatus::TooFewSamples,
            Error::NoConvergence { .. } => McStatus::NoConvergence,
            Error::Io(_) => McStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(McStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> McStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => McStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside mcchannel".into());
            McStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller guarantees `p` is null or valid for reads.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: the caller guarantees `p` is null or valid for writes.
    unsafe { p.as_mut() }.ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: the caller guarantees `p` points at `n` readable doubles.
    Ok(unsafe { std::slice::from_raw_parts(p, n) })
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: the caller guarantees a NUL-terminated string.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|e| Failure(McStatus::InvalidUtf8, format!("`{what}` is not UTF-8: {e}")))
}

/// Coefficients of the vertical channel model and the link distance.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McVerticalParams {
    pub a: f64,
    pub b: f64,
    pub e: f64,
    pub d: f64,
}

impl From<McVerticalParams> for VerticalChannelParams {
    fn from(p: McVerticalParams) -> Self {
        VerticalChannelParams {
            amplitude: p.a,
            spread: p.b,
            gravity_slope: p.e,
            distance: p.d,
        }
    }
}

impl From<VerticalChannelParams> for McVerticalParams {
    fn from(p: VerticalChannelParams) -> Self {
        McVerticalParams {
            a: p.amplitude,
            b: p.spread,
            e: p.gravity_slope,
            d: p.distance,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McDiffusionParams {
    pub molecule_count: f64,
    pub diffusion_coefficient: f64,
    pub dimension: u32,
    pub distance: f64,
}

impl From<McDiffusionParams> for DiffusionParams {
    fn from(p: McDiffusionParams) -> Self {
        DiffusionParams {
            molecule_count: p.molecule_count,
            diffusion_coefficient: p.diffusion_coefficient,
            dimension: p.dimension,
            distance: p.distance,
        }
    }
}

/// Levenberg-Marquardt controls. Fill with [`mc_fit_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McFitConfig {
    /// When false, the starting point is derived from the trace peak.
    pub has_initial_guess: bool,
    pub initial_guess: [f64; 3],
    pub max_iterations: u32,
    pub cost_tolerance: f64,
    pub step_tolerance: f64,
    pub initial_damping: f64,
    pub damping_up_factor: f64,
    pub damping_down_factor: f64,
    pub lower_bounds: [f64; 3],
}

impl From<FitConfig> for McFitConfig {
    fn from(c: FitConfig) -> Self {
        McFitConfig {
            has_initial_guess: c.initial_guess.is_some(),
            initial_guess: c.initial_guess.unwrap_or([0.0; 3]),
            max_iterations: c.max_iterations.min(u32::MAX as usize) as u32,
            cost_tolerance: c.cost_tolerance,
            step_tolerance: c.step_tolerance,
            initial_damping: c.initial_damping,
            damping_up_factor: c.damping_up_factor,
            damping_down_factor: c.damping_down_factor,
            lower_bounds: c.lower_bounds,
        }
    }
}

impl From<McFitConfig> for FitConfig {
    fn from(c: McFitConfig) -> Self {
        FitConfig {
            initial_guess: c.has_initial_guess.then_some(c.initial_guess),
            max_iterations: c.max_iterations as usize,
            cost_tolerance: c.cost_tolerance,
            step_tolerance: c.step_tolerance,
            initial_damping: c.initial_damping,
            damping_up_factor: c.damping_up_factor,
            damping_down_factor: c.damping_down_factor,
            lower_bounds: c.lower_bounds,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McFitResult {
    pub params: McVerticalParams,
    pub residual_sum_of_squares: f64,
    pub iterations: u32,
    pub converged: bool,
}

/// Opaque sensor trace.
pub struct McTrace {
    inner: TimeSeries,
}

/// Opaque set of concentration profiles from [`mc_simulate_json`].
pub struct McSimulation {
    profiles: Vec<ConcentrationProfile>,
}

fn boxed_trace(ts: TimeSeries, dst: *mut *mut McTrace) -> Result<(), Failure> {
    // SAFETY: checked for null; the caller owns the slot.
    let slot = unsafe { out(dst, "out") }?;
    *slot = Box::into_raw(Box::new(McTrace { inner: ts }));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mc_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: produced by CString::into_raw in this crate.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Pulse response `M / (4 pi D t)^(n/2) exp(-d^2 / (4 D t))`.
///
/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mc_diffusion_response(
    params: *const McDiffusionParams,
    t: f64,
    out_value: *mut f64,
) -> McStatus {
    guard(|| {
        let p: DiffusionParams = (*unsafe { deref(params, "params") }?).into();
        let v = channel::diffusion_response(&p, t)?;
        *unsafe { out(out_value, "out_value") }? = v;
        Ok(())
    })
}

/// Vertical model `a / sqrt(t) exp(-b d^2 / t) - e t`.
///
/// # Safety
/// `params` must be readable and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn mc_vertical_response(
    params: *const McVerticalParams,
    t: f64,
    out_value: *mut f64,
) -> McStatus {
    guard(|| {
        let p: VerticalChannelParams = (*unsafe { deref(params, "params") }?).into();
        let v = channel::vertical_response(&p, t)?;
        *unsafe { out(out_value, "out_value") }? = v;
        Ok(())
    })
}

/// Partial derivatives of the vertical model with respect to `(a, b, e)`.
///
/// # Safety
/// `params` must be readable and `out_gradient` must point at 3 writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn mc_vertical_gradient(
    params: *const McVerticalParams,
    t: f64,
    out_gradient: *mut [f64; 3],
) -> McStatus {
    guard(|| {
        let p: VerticalChannelParams = (*unsafe { deref(params, "params") }?).into();
        let g = channel::vertical_response_gradient(&p, t)?;
        *unsafe { out(out_gradient, "out_gradient") }? = g;
        Ok(())
    })
}

/// Time of the vertical model's maximum.
///
/// # Safety
/// `params` must be readable and `out_time` writable.
#[no_mangle]
pub unsafe extern "C" fn mc_peak_time(
    params: *const McVerticalParams,
    out_time: *mut f64,
) -> McStatus {
    guard(|| {
        let p: VerticalChannelParams = (*unsafe { deref(params, "params") }?).into();
        let t = channel::peak_time(&p)?;
        *unsafe { out(out_time, "out_time") }? = t;
        Ok(())
    })
}

/// # Safety
/// `out_config` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mc_fit_config_default(out_config: *mut McFitConfig) -> McStatus {
    guard(|| {
        *unsafe { out(out_config, "out_config") }? = FitConfig::default().into();
        Ok(())
    })
}

/// Builds a trace from parallel arrays of times and values.
///
/// # Safety
/// `times` and `values` must each point at `len` doubles; `out_trace` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn mc_trace_from_arrays(
    times: *const f64,
    values: *const f64,
    len: usize,
    out_trace: *mut *mut McTrace,
) -> McStatus {
    guard(|| {
        let t = unsafe { slice(times, len, "times") }?;
        let v = unsafe { slice(values, len, "values") }?;
        let ts = TimeSeries::from_pairs(
            t.iter().copied().zip(v.iter().copied()),
            TraceMeta::default(),
        )?;
        boxed_trace(ts, out_trace)
    })
}

/// Parses the trace CSV format.
///
/// # Safety
/// `csv` must be a NUL-terminated string; `out_trace` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mc_trace_parse_csv(
    csv: *const c_char,
    out_trace: *mut *mut McTrace,
) -> McStatus {
    guard(|| {
        let text = unsafe { c_str(csv, "csv") }?;
        boxed_trace(trace::parse_trace(text)?, out_trace)
    })
}

/// Serializes a trace to the CSV format. Free the result with
/// [`mc_string_free`].
///
/// # Safety
/// `trace` must be a live handle; `out_csv` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mc_trace_to_csv(
    trace: *const McTrace,
    out_csv: *mut *mut c_char,
) -> McStatus {
    guard(|| {
        let tr = unsafe { deref(trace, "trace") }?;
        let text = trace::serialize_trace(&tr.inner);
        let c = CString::new(text)
            .map_err(|_| Failure(McStatus::Parse, "trace metadata contains NUL".into()))?;
        *unsafe { out(out_csv, "out_csv") }? = c.into_raw();
        Ok(())
    })
}

/// Number of samples, or 0 for NULL.
///
/// # Safety
/// `trace` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mc_trace_len(trace: *const McTrace) -> usize {
    // SAFETY: caller contract.
    unsafe { trace.as_ref() }.map_or(0, |t| t.inner.len())
}

/// Reads sample `index`.
///
/// # Safety
/// `trace` must be a live handle; `out_t` and `out_v` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mc_trace_get(
    trace: *const McTrace,
    index: usize,
    out_t: *mut f64,
    out_v: *mut f64,
) -> McStatus {
    guard(|| {
        let tr = unsafe { deref(trace, "trace") }?;
        let s = tr.inner.samples().get(index).ok_or_else(|| {
            Failure(
                McStatus::IndexOutOfRange,
                format!("index {index} out of range for {} samples", tr.inner.len()),
            )
        })?;
        let t_slot = unsafe { out(out_t, "out_t") }?;
        let v_slot = unsafe { out(out_v, "out_v") }?;
        *t_slot = s.t;
        *v_slot = s.v;
        Ok(())
    })
}

/// Divides a trace by its maximum.
///
/// # Safety
/// `trace` must be a live handle; `out_trace` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mc_trace_normalize(
    trace: *const McTrace,
    out_trace: *mut *mut McTrace,
) -> McStatus {
    guard(|| {
        let tr = unsafe { deref(trace, "trace") }?;
        boxed_trace(trace::normalize_peak(&tr.inner)?, out_trace)
    })
}

/// Keeps samples with `start < t <= end`.
///
/// # Safety
/// `trace` must be a live handle; `out_trace` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mc_trace_window(
    trace: *const McTrace,
    start: f64,
    end: f64,
    out_trace: *mut *mut McTrace,
) -> McStatus {
    guard(|| {
        let tr = unsafe { deref(trace, "trace") }?;
        boxed_trace(trace::window(&tr.inner, start, end)?, out_trace)
    })
}

/// Subtracts a constant baseline.
///
/// # Safety
/// `trace` must be a live handle; `out_trace` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mc_trace_subtract_baseline(
    trace: *const McTrace,
    baseline: f64,
    out_trace: *mut *mut McTrace,
) -> McStatus {
    guard(|| {
        let tr = unsafe { deref(trace, "trace") }?;
        boxed_trace(trace::subtract_baseline(&tr.inner, baseline), out_trace)
    })
}

/// Linear interpolation onto `grid`; no extrapolation.
///
/// # Safety
/// `trace` must be a live handle, `grid` must point at `len` doubles and
/// `out_trace` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mc_trace_resample(
    trace: *const McTrace,
    grid: *const f64,
    len: usize,
    out_trace: *mut *mut McTrace,
) -> McStatus {
    guard(|| {
        let tr = unsafe { deref(trace, "trace") }?;
        let g = unsafe { slice(grid, len, "grid") }?;
        boxed_trace(trace::resample(&tr.inner, g)?, out_trace)
    })
}

/// Pointwise mean of `count` traces sampled on the same grid.
///
/// # Safety
/// `traces` must point at `count` live handles; `out_trace` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mc_trace_average(
    traces: *const *const McTrace,
    count: usize,
    out_trace: *mut *mut McTrace,
) -> McStatus {
    guard(|| {
        if count > 0 && traces.is_null() {
            return Err(null("traces"));
        }
        let handles = if count == 0 {
            &[][..]
        } else {
            // SAFETY: caller contract.
            unsafe { std::slice::from_raw_parts(traces, count) }
        };
        let series = handles
            .iter()
            .map(|&h| unsafe { deref(h, "traces[i]") }.map(|t| t.inner.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let set = trace::TrialSet::new(series)?;
        boxed_trace(trace::average_trials(&set)?, out_trace)
    })
}

/// Releases a trace. NULL is ignored.
///
/// # Safety
/// `trace` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mc_trace_free(trace: *mut McTrace) {
    if !trace.is_null() {
        // SAFETY: produced by Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(trace) });
    }
}

/// Vertical-model samples on `grid` plus seeded Gaussian noise.
///
/// # Safety
/// `params` must be readable, `grid` must point at `len` doubles and
/// `out_trace` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mc_synthetic_trace(
    params: *const McVerticalParams,
    grid: *const f64,
    len: usize,
    noise_sigma: f64,
    seed: u64,
    out_trace: *mut *mut McTrace,
) -> McStatus {
    guard(|| {
        let p: VerticalChannelParams = (*unsafe { deref(params, "params") }?).into();
        let g = unsafe { slice(grid, len, "grid") }?;
        boxed_trace(sim::synthetic_trace(&p, g, noise_sigma, seed)?, out_trace)
    })
}

/// Fits `(a, b, e)` at fixed distance `d`. `config` may be NULL for the
/// defaults. A fit that fails to converge still returns `MC_STATUS_OK`
/// with `converged = false`.
///
/// # Safety
/// `trace` must be a live handle, `config` NULL or readable, `out_result`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mc_fit_vertical(
    trace: *const McTrace,
    d: f64,
    config: *const McFitConfig,
    out_result: *mut McFitResult,
) -> McStatus {
    guard(|| {
        let tr = unsafe { deref(trace, "trace") }?;
        // SAFETY: caller contract; NULL selects the defaults.
        let cfg: FitConfig =
            unsafe { config.as_ref() }.map_or_else(FitConfig::default, |c| (*c).into());
        let r = fit::fit_vertical_model(&tr.inner, d, &cfg)?;
        *unsafe { out(out_result, "out_result") }? = McFitResult {
            params: r.params.into(),
            residual_sum_of_squares: r.residual_sum_of_squares,
            iterations: r.iterations.min(u32::MAX as usize) as u32,
            converged: r.converged,
        };
        Ok(())
    })
}

/// Mean coefficients of `count` converged fits sharing one distance.
///
/// # Safety
/// `results` must point at `count` readable results; `out_params` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mc_average_fit(
    results: *const McFitResult,
    count: usize,
    out_params: *mut McVerticalParams,
) -> McStatus {
    guard(|| {
        if count > 0 && results.is_null() {
            return Err(null("results"));
        }
        let rs = if count == 0 {
            &[][..]
        } else {
            // SAFETY: caller contract.
            unsafe { std::slice::from_raw_parts(results, count) }
        };
        let full: Vec<FitResult> = rs
            .iter()
            .map(|r| FitResult {
                params: r.params.into(),
                residual_sum_of_squares: r.residual_sum_of_squares,
                iterations: r.iterations as usize,
                converged: r.converged,
                per_iteration_cost: Vec::new(),
                termination: if r.converged {
                    Termination::CostTolerance
                } else {
                    Termination::NoDecrease
                },
            })
            .collect();
        let avg = fit::average_fit(&full)?;
        *unsafe { out(out_params, "out_params") }? = avg.into();
        Ok(())
    })
}

/// Runs the particle random walk from a JSON configuration (same schema as
/// the `simulate` subcommand).
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out_simulation` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mc_simulate_json(
    config_json: *const c_char,
    out_simulation: *mut *mut McSimulation,
) -> McStatus {
    guard(|| {
        let text = unsafe { c_str(config_json, "config_json") }?;
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: SimConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            Failure(
                McStatus::Json,
                format!("config error at `{}`: {}", e.path(), e.inner()),
            )
        })?;
        let profiles = sim::simulate(&cfg)?;
        let slot = unsafe { out(out_simulation, "out_simulation") }?;
        *slot = Box::into_raw(Box::new(McSimulation { profiles }));
        Ok(())
    })
}

/// Number of snapshots, or 0 for NULL.
///
/// # Safety
/// `simulation` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mc_simulation_snapshot_count(simulation: *const McSimulation) -> usize {
    // SAFETY: caller contract.
    unsafe { simulation.as_ref() }.map_or(0, |s| s.profiles.len())
}

/// Snapshot `index` as a trace of (bin center, concentration), plus its
/// time and out-of-range particle count.
///
/// # Safety
/// `simulation` must be a live handle; the out-pointers must be writable
/// (`out_time` and `out_out_of_range` may be NULL).
#[no_mangle]
pub unsafe extern "C" fn mc_simulation_profile(
    simulation: *const McSimulation,
    index: usize,
    out_time: *mut f64,
    out_out_of_range: *mut u64,
    out_trace: *mut *mut McTrace,
) -> McStatus {
    guard(|| {
        let s = unsafe { deref(simulation, "simulation") }?;
        let p = s.profiles.get(index).ok_or_else(|| {
            Failure(
                McStatus::IndexOutOfRange,
                format!("snapshot {index} out of range for {}", s.profiles.len()),
            )
        })?;
        // SAFETY: optional out-pointers; caller contract.
        if let Some(t) = unsafe { out_time.as_mut() } {
            *t = p.time;
        }
        if let Some(o) = unsafe { out_out_of_range.as_mut() } {
            *o = p.out_of_range;
        }
        boxed_trace(p.to_trace(), out_trace)
    })
}

/// Releases a simulation. NULL is ignored.
///
/// # Safety
/// `simulation` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mc_simulation_free(simulation: *mut McSimulation) {
    if !simulation.is_null() {
        // SAFETY: produced by Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(simulation) });
    }
}
