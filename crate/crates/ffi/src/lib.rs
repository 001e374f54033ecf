//! C ABI over `pmslt-core`.
//!
//! Objects are opaque handles created by `pmslt_*_new`/`_load`/`_build`
//! functions and released with the matching `_free`. Every fallible call
//! returns a [`PmsltStatus`]; the message of the last failure on the calling
//! thread is available from [`pmslt_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use pmslt_core::dataset::{load_country_dataset, load_registry, InputPaths};
use pmslt_core::indicator;
use pmslt_core::pmslt::ProjectionResult;
use pmslt_core::scenario::{ScenarioError, ScenarioKind, ScenarioSolver, ScenarioSpec};
use pmslt_core::trend::{build_bau, Bau};
use pmslt_core::{CountryDataset, RunConfig, Sex};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmsltStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Unreadable or inconsistent input files.
    Input = 3,
    /// BAU trend construction failed.
    Fit = 4,
    /// The target cannot be reached inside the search bracket.
    Unreachable = 5,
    Solve = 6,
    Projection = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmsltSex {
    Female = 0,
    Male = 1,
}

impl From<PmsltSex> for Sex {
    fn from(s: PmsltSex) -> Self {
        match s {
            PmsltSex::Female => Sex::Female,
            PmsltSex::Male => Sex::Male,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmsltScenario {
    Bau = 0,
    Prevention = 1,
    TreatmentDefault = 2,
    TreatmentCfrOnly = 3,
    TreatmentRemissionOnly = 4,
    Blended = 5,
}

impl From<PmsltScenario> for ScenarioKind {
    fn from(k: PmsltScenario) -> Self {
        match k {
            PmsltScenario::Bau => ScenarioKind::Bau,
            PmsltScenario::Prevention => ScenarioKind::Prevention,
            PmsltScenario::TreatmentDefault => ScenarioKind::TreatmentDefault,
            PmsltScenario::TreatmentCfrOnly => ScenarioKind::TreatmentCfrOnly,
            PmsltScenario::TreatmentRemissionOnly => ScenarioKind::TreatmentRemissionOnly,
            PmsltScenario::Blended => ScenarioKind::Blended,
        }
    }
}

/// Solved acceleration. `delta` is the blend fraction for blended solves.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmsltSolution {
    pub delta: f64,
    pub achieved_reduction: f64,
    pub iterations: u32,
}

pub struct PmsltConfig(RunConfig);

/// One country × sex stratum together with its run configuration.
pub struct PmsltStratum {
    config: RunConfig,
    dataset: CountryDataset,
    bau: Option<Bau>,
}

pub struct PmsltProjection(ProjectionResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: PmsltStatus, msg: impl Into<String>) -> PmsltStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> PmsltStatus) -> PmsltStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(PmsltStatus::Panic, msg)
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, PmsltStatus> {
    if p.is_null() {
        return Err(fail(PmsltStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PmsltStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

fn scenario_status(e: ScenarioError) -> PmsltStatus {
    let status = match e {
        ScenarioError::Unreachable { .. } => PmsltStatus::Unreachable,
        ScenarioError::InvalidSpec(_) => PmsltStatus::InvalidArgument,
        ScenarioError::Projection(_) => PmsltStatus::Projection,
        _ => PmsltStatus::Solve,
    };
    fail(status, e.to_string())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next `pmslt_*` call on the same thread.
#[no_mangle]
pub extern "C" fn pmslt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pmslt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn pmslt_config_new() -> *mut PmsltConfig {
    Box::into_raw(Box::new(PmsltConfig(RunConfig::default())))
}

/// Reads a TOML run configuration; omitted keys take their defaults.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pmslt_config_load(path: *const c_char, out: *mut *mut PmsltConfig) -> PmsltStatus {
    guard(|| {
        if out.is_null() {
            return fail(PmsltStatus::NullPointer, "out is null");
        }
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail(PmsltStatus::Input, format!("{path}: {e}")),
        };
        let cfg: RunConfig = match toml::from_str(&text) {
            Ok(c) => c,
            Err(e) => return fail(PmsltStatus::Input, format!("{path}: {e}")),
        };
        if let Err(e) = cfg.validate() {
            return fail(PmsltStatus::InvalidArgument, format!("{path}: {e}"));
        }
        *out = Box::into_raw(Box::new(PmsltConfig(cfg)));
        PmsltStatus::Ok
    })
}

/// # Safety
/// `config` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pmslt_config_free(config: *mut PmsltConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Loads one stratum from an input directory. `config` may be null for the
/// defaults.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pmslt_stratum_load(
    data_dir: *const c_char,
    country: *const c_char,
    sex: PmsltSex,
    config: *const PmsltConfig,
    out: *mut *mut PmsltStratum,
) -> PmsltStatus {
    guard(|| {
        if out.is_null() {
            return fail(PmsltStatus::NullPointer, "out is null");
        }
        let (dir, country) = match (str_arg(data_dir, "data_dir"), str_arg(country, "country")) {
            (Ok(d), Ok(c)) => (d, c),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let config = if config.is_null() {
            RunConfig::default()
        } else {
            (*config).0.clone()
        };
        let paths = InputPaths::in_dir(Path::new(dir));
        let loaded = load_registry(&paths.registry)
            .and_then(|reg| load_country_dataset(&paths, &reg, &config, country, sex.into()));
        match loaded {
            Ok(dataset) => {
                *out = Box::into_raw(Box::new(PmsltStratum {
                    config,
                    dataset,
                    bau: None,
                }));
                PmsltStatus::Ok
            }
            Err(e) => fail(PmsltStatus::Input, e.to_string()),
        }
    })
}

/// # Safety
/// `stratum` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pmslt_stratum_free(stratum: *mut PmsltStratum) {
    if !stratum.is_null() {
        drop(Box::from_raw(stratum));
    }
}

/// Fits the BAU trajectories. Other stratum calls build them on first use.
///
/// # Safety
/// `stratum` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn pmslt_stratum_build_bau(stratum: *mut PmsltStratum) -> PmsltStatus {
    guard(|| match stratum.as_mut() {
        None => fail(PmsltStatus::NullPointer, "stratum is null"),
        Some(s) => ensure_bau(s),
    })
}

fn ensure_bau(s: &mut PmsltStratum) -> PmsltStatus {
    if s.bau.is_none() {
        match build_bau(&s.dataset, &s.config) {
            Ok(b) => s.bau = Some(b),
            Err(e) => return fail(PmsltStatus::Fit, e.to_string()),
        }
    }
    PmsltStatus::Ok
}

fn with_solver(
    stratum: *mut PmsltStratum,
    f: impl FnOnce(&ScenarioSolver<'_>, &RunConfig) -> PmsltStatus,
) -> PmsltStatus {
    guard(|| {
        let Some(s) = (unsafe { stratum.as_mut() }) else {
            return fail(PmsltStatus::NullPointer, "stratum is null");
        };
        let status = ensure_bau(s);
        if status != PmsltStatus::Ok {
            return status;
        }
        let bau = s.bau.as_ref().expect("built above");
        match ScenarioSolver::new(&s.dataset, &bau.surfaces, &s.config) {
            Ok(solver) => f(&solver, &s.config),
            Err(e) => scenario_status(e),
        }
    })
}

/// Reduction in the indicator between baseline and target year under BAU.
///
/// # Safety
/// `stratum` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pmslt_bau_reduction(stratum: *mut PmsltStratum, out: *mut f64) -> PmsltStatus {
    if out.is_null() {
        return fail(PmsltStatus::NullPointer, "out is null");
    }
    with_solver(stratum, |solver, _| match solver.bau_reduction() {
        Ok(r) => {
            *out = r;
            PmsltStatus::Ok
        }
        Err(e) => scenario_status(e),
    })
}

/// Smallest acceleration of one channel meeting the target. Blended and BAU
/// are rejected; use [`pmslt_solve_blended`].
///
/// # Safety
/// `stratum` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pmslt_solve(
    stratum: *mut PmsltStratum,
    kind: PmsltScenario,
    out: *mut PmsltSolution,
) -> PmsltStatus {
    if out.is_null() {
        return fail(PmsltStatus::NullPointer, "out is null");
    }
    if matches!(kind, PmsltScenario::Bau | PmsltScenario::Blended) {
        return fail(PmsltStatus::InvalidArgument, "kind must be a single-channel scenario");
    }
    with_solver(stratum, |solver, _| match solver.solve(kind.into()) {
        Ok(s) => {
            *out = PmsltSolution {
                delta: s.spec.reported_delta(),
                achieved_reduction: s.achieved_reduction,
                iterations: s.iterations as u32,
            };
            PmsltStatus::Ok
        }
        Err(e) => scenario_status(e),
    })
}

/// Blend fraction α applied to the given prevention and treatment deltas.
///
/// # Safety
/// `stratum` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pmslt_solve_blended(
    stratum: *mut PmsltStratum,
    delta_prevention: f64,
    delta_treatment: f64,
    out: *mut PmsltSolution,
) -> PmsltStatus {
    if out.is_null() {
        return fail(PmsltStatus::NullPointer, "out is null");
    }
    with_solver(stratum, |solver, _| {
        match solver.solve_blended(delta_prevention, delta_treatment) {
            Ok(s) => {
                *out = PmsltSolution {
                    delta: s.spec.reported_delta(),
                    achieved_reduction: s.achieved_reduction,
                    iterations: s.iterations as u32,
                };
                PmsltStatus::Ok
            }
            Err(e) => scenario_status(e),
        }
    })
}

fn project_into(
    stratum: *mut PmsltStratum,
    spec: impl FnOnce(&RunConfig) -> Result<ScenarioSpec, ScenarioError>,
    out: *mut *mut PmsltProjection,
) -> PmsltStatus {
    if out.is_null() {
        return fail(PmsltStatus::NullPointer, "out is null");
    }
    with_solver(stratum, |solver, config| {
        match spec(config).and_then(|s| solver.project(&s)) {
            Ok(r) => {
                unsafe { *out = Box::into_raw(Box::new(PmsltProjection(r))) };
                PmsltStatus::Ok
            }
            Err(e) => scenario_status(e),
        }
    })
}

/// Projects a single-channel scenario (or BAU, ignoring `delta`).
///
/// # Safety
/// `stratum` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pmslt_project(
    stratum: *mut PmsltStratum,
    kind: PmsltScenario,
    delta: f64,
    out: *mut *mut PmsltProjection,
) -> PmsltStatus {
    project_into(
        stratum,
        |cfg| match kind {
            PmsltScenario::Bau => Ok(ScenarioSpec::bau(cfg)),
            k => ScenarioSpec::new(k.into(), delta, cfg),
        },
        out,
    )
}

/// # Safety
/// `stratum` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pmslt_project_blended(
    stratum: *mut PmsltStratum,
    alpha: f64,
    delta_prevention: f64,
    delta_treatment: f64,
    out: *mut *mut PmsltProjection,
) -> PmsltStatus {
    project_into(
        stratum,
        |cfg| ScenarioSpec::blended(alpha, delta_prevention, delta_treatment, cfg),
        out,
    )
}

/// # Safety
/// `projection` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pmslt_projection_free(projection: *mut PmsltProjection) {
    if !projection.is_null() {
        drop(Box::from_raw(projection));
    }
}

/// First and last projected calendar years.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pmslt_projection_years(
    projection: *const PmsltProjection,
    first: *mut i32,
    last: *mut i32,
) -> PmsltStatus {
    guard(|| match projection.as_ref() {
        Some(p) if !first.is_null() && !last.is_null() => {
            *first = p.0.first_year();
            *last = p.0.last_year();
            PmsltStatus::Ok
        }
        _ => fail(PmsltStatus::NullPointer, "null argument"),
    })
}

/// Projected NCD 40q30 in `year`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pmslt_projection_40q30(
    projection: *const PmsltProjection,
    year: i32,
    out: *mut f64,
) -> PmsltStatus {
    guard(|| match projection.as_ref() {
        Some(p) if !out.is_null() => match indicator::compute_40q30(&p.0, year) {
            Ok(q) => {
                *out = q;
                PmsltStatus::Ok
            }
            Err(e) => fail(PmsltStatus::InvalidArgument, e.to_string()),
        },
        _ => fail(PmsltStatus::NullPointer, "null argument"),
    })
}

/// Start-of-year population at single-year `age`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pmslt_projection_population(
    projection: *const PmsltProjection,
    age: u32,
    year: i32,
    out: *mut f64,
) -> PmsltStatus {
    guard(|| match projection.as_ref() {
        Some(p) if !out.is_null() => {
            let pop = &p.0.population;
            if age as usize >= pmslt_core::grid::N_AGES || !pop.contains_year(year) {
                return fail(PmsltStatus::InvalidArgument, format!("no cell for age {age} in {year}"));
            }
            *out = pop.get(age as usize, year);
            PmsltStatus::Ok
        }
        _ => fail(PmsltStatus::NullPointer, "null argument"),
    })
}
