//! C ABI over the planning engine.
//!
//! Every function returns a [`FlexStatus`]. On failure the message is kept per thread and read
//! back with [`flexbus_last_error`]. Handles are opaque and must be released with their
//! `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use flexbus::config::{AlgorithmParams, InstanceConfig};
use flexbus::domain::ServiceInstance;
use flexbus::optimizer::{run, Evaluator};
use flexbus::phase1::{solve_p1, Plan, ReliabilityVector};
use flexbus::phase2::{evaluate, CostReport, P2Options};
use flexbus::stochastic::sample_scenarios;
use flexbus::FlexError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlexStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInstance = 3,
    Infeasible = 4,
    InvalidArgument = 5,
    Io = 6,
    Solver = 7,
    Panic = 8,
}

/// Cost summary of an evaluated plan.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FlexCostSummary {
    pub fixed_cost: f64,
    pub expected_adhoc: f64,
    pub total_cost: f64,
    pub vehicles: usize,
    pub service_rate: f64,
    pub proven_optimal: bool,
}

/// Loaded instance with its algorithm parameters.
pub struct FlexInstance {
    inst: ServiceInstance,
    params: AlgorithmParams,
}

/// Phase-1 plan.
pub struct FlexPlan {
    plan: Plan,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.as_bytes().to_vec());
}

fn status_of(err: &FlexError) -> FlexStatus {
    match err {
        FlexError::InfeasibleAtReliability => FlexStatus::Infeasible,
        FlexError::InvalidReliability(_) | FlexError::DimensionMismatch { .. } => FlexStatus::InvalidArgument,
        FlexError::Io(_) => FlexStatus::Io,
        FlexError::Solver(_) | FlexError::InvalidModel(_) | FlexError::BoundTooSmall { .. } => FlexStatus::Solver,
        _ => FlexStatus::InvalidInstance,
    }
}

fn guard<F: FnOnce() -> Result<(), FlexStatus>>(f: F) -> FlexStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FlexStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            FlexStatus::Panic
        }
    }
}

fn fail(err: FlexError) -> FlexStatus {
    set_error(&err.to_string());
    status_of(&err)
}

unsafe fn as_ref<'a, T>(p: *const T) -> Result<&'a T, FlexStatus> {
    if p.is_null() {
        set_error("null pointer argument");
        Err(FlexStatus::NullPointer)
    } else {
        Ok(&*p)
    }
}

fn summary(r: &CostReport) -> FlexCostSummary {
    FlexCostSummary {
        fixed_cost: r.fixed_cost,
        expected_adhoc: r.expected_adhoc,
        total_cost: r.total_cost,
        vehicles: r.vehicles,
        service_rate: r.service_rate,
        proven_optimal: r.proven_optimal,
    }
}

/// Copies the last error message of this thread into `buf` as a NUL-terminated string.
///
/// Returns the full message length without the terminator; a return value ≥ `len` means the
/// message was truncated.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn flexbus_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses and validates an instance from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn flexbus_instance_from_json(json: *const c_char, out: *mut *mut FlexInstance) -> FlexStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            set_error("null pointer argument");
            return Err(FlexStatus::NullPointer);
        }
        *out = ptr::null_mut();
        let text = CStr::from_ptr(json).to_str().map_err(|_| {
            set_error("instance text is not UTF-8");
            FlexStatus::InvalidUtf8
        })?;
        let cfg = InstanceConfig::from_json(text).map_err(fail)?;
        let inst = cfg.to_instance().map_err(fail)?;
        *out = Box::into_raw(Box::new(FlexInstance { inst, params: cfg.algorithm }));
        Ok(())
    })
}

/// # Safety
/// `inst` must be null or a handle from [`flexbus_instance_from_json`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn flexbus_instance_free(inst: *mut FlexInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Number of zones and demand categories.
///
/// # Safety
/// `inst` must be a live handle; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn flexbus_instance_size(inst: *const FlexInstance, zones: *mut usize, categories: *mut usize) -> FlexStatus {
    guard(|| {
        let i = as_ref(inst)?;
        if zones.is_null() || categories.is_null() {
            set_error("null pointer argument");
            return Err(FlexStatus::NullPointer);
        }
        *zones = i.inst.zones.len();
        *categories = i.inst.categories.len();
        Ok(())
    })
}

/// Phase-1 plan with every volume reliability at `rho_volume` and every detour reliability at
/// `rho_detour`.
///
/// # Safety
/// `inst` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn flexbus_plan_uniform(
    inst: *const FlexInstance,
    rho_volume: f64,
    rho_detour: f64,
    out: *mut *mut FlexPlan,
) -> FlexStatus {
    guard(|| {
        let i = as_ref(inst)?;
        if out.is_null() {
            set_error("null pointer argument");
            return Err(FlexStatus::NullPointer);
        }
        *out = ptr::null_mut();
        let rho = ReliabilityVector::uniform(&i.inst, rho_volume, rho_detour);
        let plan = solve_p1(&i.inst, &rho).map_err(fail)?;
        *out = Box::into_raw(Box::new(FlexPlan { plan }));
        Ok(())
    })
}

/// Runs the reliability optimizer on `scenarios` draws of `seed`; 0 scenarios uses the
/// instance default. Writes the best plan and its cost.
///
/// # Safety
/// `inst` must be a live handle; `out` and `report` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn flexbus_optimize(
    inst: *const FlexInstance,
    seed: u64,
    scenarios: usize,
    out: *mut *mut FlexPlan,
    report: *mut FlexCostSummary,
) -> FlexStatus {
    guard(|| {
        let i = as_ref(inst)?;
        if out.is_null() || report.is_null() {
            set_error("null pointer argument");
            return Err(FlexStatus::NullPointer);
        }
        *out = ptr::null_mut();
        let mut params = i.params.clone();
        if scenarios > 0 {
            params.scenarios = scenarios;
        }
        let scen = sample_scenarios(&i.inst, params.scenarios, seed).map_err(fail)?;
        let mut ev = Evaluator::new(&i.inst, &scen);
        let rho0 = ReliabilityVector::uniform(&i.inst, params.initial_rho, params.initial_rho);
        let res = run(&mut ev, &rho0, &params).map_err(fail)?;
        *report = summary(&res.report);
        *out = Box::into_raw(Box::new(FlexPlan { plan: res.plan }));
        Ok(())
    })
}

/// # Safety
/// `plan` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn flexbus_plan_free(plan: *mut FlexPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Fixed cost and vehicle count of a plan.
///
/// # Safety
/// `plan` must be a live handle; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn flexbus_plan_info(plan: *const FlexPlan, fixed_cost: *mut f64, vehicles: *mut usize) -> FlexStatus {
    guard(|| {
        let p = as_ref(plan)?;
        if fixed_cost.is_null() || vehicles.is_null() {
            set_error("null pointer argument");
            return Err(FlexStatus::NullPointer);
        }
        *fixed_cost = p.plan.fixed_cost;
        *vehicles = p.plan.vehicles.len();
        Ok(())
    })
}

/// Expected cost of `plan` over `scenarios` draws of `seed`.
///
/// # Safety
/// `inst` and `plan` must be live handles and `report` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn flexbus_evaluate(
    inst: *const FlexInstance,
    plan: *const FlexPlan,
    seed: u64,
    scenarios: usize,
    report: *mut FlexCostSummary,
) -> FlexStatus {
    guard(|| {
        let i = as_ref(inst)?;
        let p = as_ref(plan)?;
        if report.is_null() {
            set_error("null pointer argument");
            return Err(FlexStatus::NullPointer);
        }
        if scenarios == 0 {
            set_error("scenario count must be positive");
            return Err(FlexStatus::InvalidArgument);
        }
        let scen = sample_scenarios(&i.inst, scenarios, seed).map_err(fail)?;
        let (r, _) = evaluate(&i.inst, &p.plan, &scen, &P2Options::default()).map_err(fail)?;
        *report = summary(&r);
        Ok(())
    })
}
