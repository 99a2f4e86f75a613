//! C ABI over `veil-core`.
//!
//! Every fallible entry point returns a [`VeilStatus`]; on failure the message
//! is available from [`veil_last_error_message`] on the same thread. Strings
//! returned through out-parameters are owned by the caller and released with
//! [`veil_string_free`]. Pointer out-parameters are set to null on failure.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use veil_core::sim::{self, SimConfig, Simulation, TraceRecord};
use veil_core::verify::{self, ClaimId, ClaimSpec};
use veil_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VeilStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Numeric = 5,
    Io = 6,
    /// The simulation already ran its configured number of steps.
    Finished = 7,
    /// A verification ran but the claim was not supported at the requested confidence.
    VerifyFailed = 8,
    Panic = 99,
}

/// Opaque closed-loop simulation handle.
pub struct VeilSimulation {
    inner: Simulation,
}

/// Scalar summary of one control period.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct VeilStep {
    pub k: usize,
    pub t: f64,
    pub mu: f64,
    pub mu_max: f64,
    pub barrier: f64,
    pub h_lower: f64,
    pub h_upper: f64,
    pub delta_total: f64,
    pub tracking_error: f64,
    pub rho: f64,
    pub resampled: bool,
    pub certified: bool,
}

impl From<&TraceRecord> for VeilStep {
    fn from(r: &TraceRecord) -> Self {
        VeilStep {
            k: r.k,
            t: r.t,
            mu: r.mu,
            mu_max: r.mu_max,
            barrier: r.barrier,
            h_lower: r.h_lower,
            h_upper: r.h_upper,
            delta_total: r.delta_total,
            tracking_error: r.tracking_error,
            rho: r.rho,
            resampled: r.resampled,
            certified: r.certified,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(VeilStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Config(_) | Error::Parse { .. } => VeilStatus::Config,
            Error::UnknownClaim(_) => VeilStatus::InvalidArgument,
            Error::Io { .. } | Error::Csv(_) | Error::Json(_) => VeilStatus::Io,
            _ => VeilStatus::Numeric,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<VeilStatus>) -> VeilStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("panic: {msg}"));
            VeilStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(VeilStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(VeilStatus::InvalidUtf8, format!("`{name}`: {e}")))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    let c = CString::new(s).map_err(|e| Failure(VeilStatus::InvalidArgument, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn handle<'a>(sim: *mut VeilSimulation) -> FfiResult<&'a mut VeilSimulation> {
    sim.as_mut().ok_or_else(|| null("sim"))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn veil_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn veil_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Writes the reference configuration as TOML to `*out`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn veil_config_example(out: *mut *mut c_char) -> VeilStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        write_string(out, SimConfig::example().to_toml_string()?)?;
        Ok(VeilStatus::Ok)
    })
}

/// Creates a simulation from a TOML configuration.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn veil_simulation_new(
    config_toml: *const c_char,
    out: *mut *mut VeilSimulation,
) -> VeilStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = SimConfig::from_toml_str(read_str(config_toml, "config_toml")?)?;
        let inner = Simulation::new(cfg)?;
        *out = Box::into_raw(Box::new(VeilSimulation { inner }));
        Ok(VeilStatus::Ok)
    })
}

/// # Safety
/// `sim` must be null or a handle from [`veil_simulation_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn veil_simulation_free(sim: *mut VeilSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advances one control period. `out` may be null.
///
/// # Safety
/// `sim` must be a live handle; `out` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn veil_simulation_step(
    sim: *mut VeilSimulation,
    out: *mut VeilStep,
) -> VeilStatus {
    guard(|| {
        let sim = handle(sim)?;
        if sim.inner.step_index() >= sim.inner.config().steps {
            return Err(Failure(
                VeilStatus::Finished,
                format!(
                    "simulation finished after {} steps",
                    sim.inner.config().steps
                ),
            ));
        }
        let record = sim.inner.step()?;
        if let Some(out) = out.as_mut() {
            *out = VeilStep::from(&record);
        }
        Ok(VeilStatus::Ok)
    })
}

/// Like [`veil_simulation_step`] but writes the full trace record as JSON.
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn veil_simulation_step_json(
    sim: *mut VeilSimulation,
    out: *mut *mut c_char,
) -> VeilStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let sim = handle(sim)?;
        if sim.inner.step_index() >= sim.inner.config().steps {
            return Err(Failure(VeilStatus::Finished, "simulation finished".into()));
        }
        let record = sim.inner.step()?;
        write_string(out, serde_json::to_string(&record).map_err(Error::from)?)?;
        Ok(VeilStatus::Ok)
    })
}

/// Number of steps taken so far, or 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn veil_simulation_step_index(sim: *const VeilSimulation) -> usize {
    sim.as_ref().map_or(0, |s| s.inner.step_index())
}

/// Copies the true position into `out[..len]` and writes the dimension to `*dim`.
/// Fails with `InvalidArgument` when `len` is smaller than the dimension.
///
/// # Safety
/// `sim` must be a live handle, `out` valid for `len` doubles, `dim` valid.
#[no_mangle]
pub unsafe extern "C" fn veil_simulation_position(
    sim: *const VeilSimulation,
    out: *mut f64,
    len: usize,
    dim: *mut usize,
) -> VeilStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        if out.is_null() || dim.is_null() {
            return Err(null(if out.is_null() { "out" } else { "dim" }));
        }
        let x = sim.inner.position();
        *dim = x.len();
        if len < x.len() {
            return Err(Failure(
                VeilStatus::InvalidArgument,
                format!("buffer holds {len} values, need {}", x.len()),
            ));
        }
        ptr::copy_nonoverlapping(x.as_ptr(), out, x.len());
        Ok(VeilStatus::Ok)
    })
}

/// Current barrier value.
///
/// # Safety
/// `sim` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn veil_simulation_barrier(
    sim: *const VeilSimulation,
    out: *mut f64,
) -> VeilStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = sim.inner.barrier();
        Ok(VeilStatus::Ok)
    })
}

/// Runs a whole simulation and writes its report as JSON.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn veil_run(config_toml: *const c_char, out: *mut *mut c_char) -> VeilStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let cfg = SimConfig::from_toml_str(read_str(config_toml, "config_toml")?)?;
        let output = sim::run_simulation(&cfg)?;
        write_string(
            out,
            serde_json::to_string(&output.report).map_err(Error::from)?,
        )?;
        Ok(VeilStatus::Ok)
    })
}

/// Runs one Monte Carlo verification and writes the report as JSON. Returns
/// `VerifyFailed` (with the report still written) when the claim is not
/// supported at the requested confidence.
///
/// # Safety
/// `claim` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn veil_verify(
    claim: *const c_char,
    trials: usize,
    states: usize,
    confidence: f64,
    seed: u64,
    out: *mut *mut c_char,
) -> VeilStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let claim: ClaimId = read_str(claim, "claim")?.parse()?;
        let mut spec = ClaimSpec::new(claim, trials, seed);
        spec.states = states;
        spec.confidence = confidence;
        let report = verify::monte_carlo_verify(&spec)?;
        write_string(out, serde_json::to_string(&report).map_err(Error::from)?)?;
        Ok(if report.pass {
            VeilStatus::Ok
        } else {
            VeilStatus::VerifyFailed
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_toml() -> CString {
        let mut cfg = SimConfig::example();
        cfg.steps = 5;
        cfg.filter.particles = 40;
        cfg.filter.n0 = 20;
        CString::new(cfg.to_toml_string().unwrap()).unwrap()
    }

    unsafe fn take(s: *mut c_char) -> String {
        let out = CStr::from_ptr(s).to_str().unwrap().to_string();
        veil_string_free(s);
        out
    }

    unsafe fn last_error() -> String {
        CStr::from_ptr(veil_last_error_message())
            .to_string_lossy()
            .into_owned()
    }

    #[test]
    fn simulation_lifecycle_matches_core() {
        let toml = small_toml();
        let expected =
            sim::run_simulation(&SimConfig::from_toml_str(toml.to_str().unwrap()).unwrap())
                .unwrap();
        unsafe {
            let mut sim = ptr::null_mut();
            assert_eq!(veil_simulation_new(toml.as_ptr(), &mut sim), VeilStatus::Ok);
            let mut b = 0.0;
            assert_eq!(veil_simulation_barrier(sim, &mut b), VeilStatus::Ok);
            assert_eq!(b, expected.trace[0].barrier);
            for rec in &expected.trace {
                let mut step = VeilStep::default();
                assert_eq!(veil_simulation_step(sim, &mut step), VeilStatus::Ok);
                assert_eq!(step.k, rec.k);
                assert_eq!(step.mu, rec.mu);
                assert_eq!(step.h_lower, rec.h_lower);
                assert_eq!(step.certified, rec.certified);
            }
            assert_eq!(veil_simulation_step_index(sim), 5);
            assert_eq!(
                veil_simulation_step(sim, ptr::null_mut()),
                VeilStatus::Finished
            );
            assert!(last_error().contains("finished"));

            let mut x = [0.0; 2];
            let mut dim = 0;
            assert_eq!(
                veil_simulation_position(sim, x.as_mut_ptr(), 2, &mut dim),
                VeilStatus::Ok
            );
            assert_eq!(dim, 2);
            assert_eq!(x.to_vec(), expected.report.final_position);
            assert_eq!(
                veil_simulation_position(sim, x.as_mut_ptr(), 1, &mut dim),
                VeilStatus::InvalidArgument
            );
            veil_simulation_free(sim);
        }
    }

    #[test]
    fn step_json_is_a_trace_record() {
        let toml = small_toml();
        unsafe {
            let mut sim = ptr::null_mut();
            assert_eq!(veil_simulation_new(toml.as_ptr(), &mut sim), VeilStatus::Ok);
            let mut s = ptr::null_mut();
            assert_eq!(veil_simulation_step_json(sim, &mut s), VeilStatus::Ok);
            let rec: TraceRecord = serde_json::from_str(&take(s)).unwrap();
            assert_eq!(rec.k, 0);
            veil_simulation_free(sim);
        }
    }

    #[test]
    fn run_writes_report_json() {
        let toml = small_toml();
        unsafe {
            let mut s = ptr::null_mut();
            assert_eq!(veil_run(toml.as_ptr(), &mut s), VeilStatus::Ok);
            let v: serde_json::Value = serde_json::from_str(&take(s)).unwrap();
            assert_eq!(v["steps"], 5);
        }
    }

    #[test]
    fn example_config_round_trips() {
        unsafe {
            let mut s = ptr::null_mut();
            assert_eq!(veil_config_example(&mut s), VeilStatus::Ok);
            let text = take(s);
            assert_eq!(
                SimConfig::from_toml_str(&text).unwrap(),
                SimConfig::example()
            );
        }
    }

    #[test]
    fn errors_map_to_codes() {
        unsafe {
            let mut sim = ptr::null_mut();
            let bad = CString::new("seed = 1").unwrap();
            assert_eq!(
                veil_simulation_new(bad.as_ptr(), &mut sim),
                VeilStatus::Config
            );
            assert!(sim.is_null());
            assert!(!last_error().is_empty());

            assert_eq!(
                veil_simulation_new(ptr::null(), &mut sim),
                VeilStatus::NullPointer
            );
            assert!(last_error().contains("config_toml"));

            let invalid = [0xffu8, 0xfe, 0];
            assert_eq!(
                veil_simulation_new(invalid.as_ptr().cast(), &mut sim),
                VeilStatus::InvalidUtf8
            );
            assert_eq!(
                veil_simulation_step(ptr::null_mut(), ptr::null_mut()),
                VeilStatus::NullPointer
            );
            let mut b = 0.0;
            assert_eq!(
                veil_simulation_barrier(ptr::null(), &mut b),
                VeilStatus::NullPointer
            );
            assert_eq!(veil_simulation_step_index(ptr::null()), 0);
            veil_simulation_free(ptr::null_mut());
            veil_string_free(ptr::null_mut());
        }
    }

    #[test]
    fn verify_reports_pass_and_failure() {
        unsafe {
            let claim = CString::new("kappa-tail").unwrap();
            let mut s = ptr::null_mut();
            assert_eq!(
                veil_verify(claim.as_ptr(), 1000, 1, 0.95, 3, &mut s),
                VeilStatus::Ok
            );
            let v: serde_json::Value = serde_json::from_str(&take(s)).unwrap();
            assert_eq!(v["claim"], "kappa-tail");

            let lemma = CString::new("lemma1").unwrap();
            assert_eq!(
                veil_verify(lemma.as_ptr(), 100, 1, 0.9999, 3, &mut s),
                VeilStatus::VerifyFailed
            );
            veil_string_free(s);

            let unknown = CString::new("nope").unwrap();
            assert_eq!(
                veil_verify(unknown.as_ptr(), 100, 1, 0.95, 3, &mut s),
                VeilStatus::InvalidArgument
            );
            assert_eq!(
                veil_verify(claim.as_ptr(), 5, 1, 0.95, 3, &mut s),
                VeilStatus::Config
            );
        }
    }
}
