use std::ffi::{c_char, CString};
use std::ptr;

use flexbus_ffi::*;

const WORKED_EXAMPLE: &str = include_str!("../../core/fixtures/worked_example.json");
const THREE_ZONE: &str = include_str!("../../core/fixtures/three_zone.json");

fn load(text: &str) -> *mut FlexInstance {
    let json = CString::new(text).unwrap();
    let mut inst = ptr::null_mut();
    assert_eq!(unsafe { flexbus_instance_from_json(json.as_ptr(), &mut inst) }, FlexStatus::Ok);
    inst
}

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { flexbus_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn plan_and_evaluate_round_trip() {
    let inst = load(WORKED_EXAMPLE);
    let (mut zones, mut cats) = (0, 0);
    assert_eq!(unsafe { flexbus_instance_size(inst, &mut zones, &mut cats) }, FlexStatus::Ok);
    assert_eq!(zones, 3);
    let mut plan = ptr::null_mut();
    assert_eq!(unsafe { flexbus_plan_uniform(inst, 0.5, 0.5, &mut plan) }, FlexStatus::Ok);
    let (mut fc, mut nv) = (0.0, 0);
    assert_eq!(unsafe { flexbus_plan_info(plan, &mut fc, &mut nv) }, FlexStatus::Ok);
    let mut rep = FlexCostSummary::default();
    assert_eq!(unsafe { flexbus_evaluate(inst, plan, 3, 5, &mut rep) }, FlexStatus::Ok);
    assert_eq!(rep.fixed_cost, fc);
    assert_eq!(rep.vehicles, nv);
    assert!((rep.total_cost - rep.fixed_cost - rep.expected_adhoc).abs() < 1e-9);
    unsafe {
        flexbus_plan_free(plan);
        flexbus_instance_free(inst);
    }
}

#[test]
fn optimize_reports_its_plan() {
    let inst = load(THREE_ZONE);
    let mut plan = ptr::null_mut();
    let mut rep = FlexCostSummary::default();
    assert_eq!(unsafe { flexbus_optimize(inst, 11, 5, &mut plan, &mut rep) }, FlexStatus::Ok);
    let (mut fc, mut nv) = (0.0, 0);
    unsafe { flexbus_plan_info(plan, &mut fc, &mut nv) };
    assert_eq!(rep.fixed_cost, fc);
    assert_eq!(rep.vehicles, nv);
    unsafe {
        flexbus_plan_free(plan);
        flexbus_instance_free(inst);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut inst = ptr::null_mut();
    assert_eq!(unsafe { flexbus_instance_from_json(ptr::null(), &mut inst) }, FlexStatus::NullPointer);
    let bad = CString::new("{\"schema_version\": 9}").unwrap();
    assert_eq!(unsafe { flexbus_instance_from_json(bad.as_ptr(), &mut inst) }, FlexStatus::InvalidInstance);
    assert!(inst.is_null());
    assert!(!last_error().is_empty());
    let inst = load(WORKED_EXAMPLE);
    let mut plan = ptr::null_mut();
    assert_eq!(unsafe { flexbus_plan_uniform(inst, 1.5, 0.5, &mut plan) }, FlexStatus::InvalidArgument);
    assert!(last_error().contains("1.5"));
    let mut rep = FlexCostSummary::default();
    assert_eq!(unsafe { flexbus_evaluate(inst, ptr::null(), 1, 1, &mut rep) }, FlexStatus::NullPointer);
    unsafe { flexbus_instance_free(inst) };
}

#[test]
fn header_compiles_as_c() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let src = std::env::temp_dir().join("flexbus_header_check.c");
    std::fs::write(&src, "#include \"flexbus.h\"\nint main(void) { FlexCostSummary s; (void)s; FlexStatus (*f)(const FlexPlan *, double *, size_t *) = flexbus_plan_info; (void)f; return FLEX_STATUS_OK; }\n").unwrap();
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(format!("{dir}/include"))
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header failed to compile"),
        Err(e) => eprintln!("no C compiler available: {e}"),
    }
}
