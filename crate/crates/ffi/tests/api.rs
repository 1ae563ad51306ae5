use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use bertrand_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = bertrand_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_string_lossy().into_owned();
    bertrand_string_free(s);
    out
}

#[test]
fn payoffs_split_ties_and_reject_off_grid_prices() {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { bertrand_grid_new(4, &mut g) }, BertrandStatus::Ok);
    let prices = [2u32, 2, 3];
    let mut pay = [f64::NAN; 3];
    assert_eq!(
        unsafe { bertrand_payoffs_of(g, prices.as_ptr(), 3, pay.as_mut_ptr()) },
        BertrandStatus::Ok
    );
    assert_eq!(pay, [0.25, 0.25, 0.0]);
    let bad = [5u32];
    assert_eq!(
        unsafe { bertrand_payoffs_of(g, bad.as_ptr(), 1, pay.as_mut_ptr()) },
        BertrandStatus::Usage
    );
    assert!(last_error().contains('5'));
    assert_eq!(
        unsafe { bertrand_payoffs_of(g, ptr::null(), 1, pay.as_mut_ptr()) },
        BertrandStatus::NullPointer
    );
    unsafe { bertrand_grid_free(g) };
}

#[test]
fn profile_handles_report_shape_and_errors() {
    let mut p = ptr::null_mut();
    let json = c(r#"{"construction": "cyclic_erd", "N": 4, "K": 100, "T": 1000}"#);
    assert_eq!(
        unsafe { bertrand_profile_from_json(json.as_ptr(), &mut p) },
        BertrandStatus::Ok
    );
    assert_eq!(unsafe { bertrand_profile_players(p) }, 4);
    assert_eq!(unsafe { bertrand_profile_k(p) }, 100);
    unsafe { bertrand_profile_free(p) };

    let mut p = ptr::null_mut();
    let json = c(r#"{"construction": "simple_grim", "N": 1, "K": 10}"#);
    assert_eq!(
        unsafe { bertrand_profile_from_json(json.as_ptr(), &mut p) },
        BertrandStatus::Construction
    );
    assert!(p.is_null());
    let json = c(r#"{"construction": "no_such"}"#);
    assert_eq!(
        unsafe { bertrand_profile_from_json(json.as_ptr(), &mut p) },
        BertrandStatus::Usage
    );
    assert!(last_error().contains("no_such"));
    let bytes = [0xffu8, 0];
    assert_eq!(
        unsafe { bertrand_profile_from_json(bytes.as_ptr().cast(), &mut p) },
        BertrandStatus::InvalidUtf8
    );
    assert_eq!(unsafe { bertrand_profile_players(ptr::null()) }, 0);
}

#[test]
fn run_exposes_metrics_utilities_and_trace() {
    let json = c(r#"{
        "profile": {"construction": "simple_grim", "N": 4, "K": 20},
        "T": 200,
        "defection": {"defectors": {"rule": "fixed_index", "index": 0}, "learner": {"kind": "hedge"}},
        "replicates": 4,
        "seed": 3
    }"#);
    let mut r = ptr::null_mut();
    assert_eq!(
        unsafe { bertrand_run_from_json(json.as_ptr(), &mut r) },
        BertrandStatus::Ok,
        "{}",
        {
            let p = bertrand_last_error();
            if p.is_null() {
                String::new()
            } else {
                last_error()
            }
        }
    );
    let price = unsafe { bertrand_run_market_price(r) };
    assert!(price > 0.0 && price < 1.0);
    assert!(unsafe { bertrand_run_stderr(r) } >= 0.0);
    let n = unsafe { bertrand_run_players(r) };
    assert_eq!(n, 4);
    let mut u = vec![0.0; n];
    assert_eq!(unsafe { bertrand_run_utilities(r, u.as_mut_ptr(), n) }, 4);
    assert!((u.iter().sum::<f64>() - price).abs() < 1e-9);
    assert_eq!(unsafe { bertrand_run_utilities(r, ptr::null_mut(), 0) }, 4);

    let mut s = ptr::null_mut();
    assert_eq!(unsafe { bertrand_run_metrics_json(r, &mut s) }, BertrandStatus::Ok);
    let metrics: serde_json::Value = serde_json::from_str(&unsafe { take(s) }).unwrap();
    assert_eq!(metrics["market_price"].as_f64().unwrap(), price);
    assert_eq!(unsafe { bertrand_run_trace_json(r, &mut s) }, BertrandStatus::Ok);
    if !s.is_null() {
        let trace: serde_json::Value = serde_json::from_str(&unsafe { take(s) }).unwrap();
        assert_eq!(trace["rounds"].as_array().unwrap().len(), 200);
    }
    unsafe { bertrand_run_free(r) };
}

#[test]
fn exact_mode_with_a_learner_is_a_config_error() {
    let json = c(r#"{
        "profile": {"construction": "simple_grim", "N": 3, "K": 10},
        "T": 10,
        "mode": "exact_automaton",
        "defection": {"defectors": {"rule": "fixed_index", "index": 0}, "learner": {"kind": "hedge"}}
    }"#);
    let mut r = ptr::null_mut();
    assert_eq!(
        unsafe { bertrand_run_from_json(json.as_ptr(), &mut r) },
        BertrandStatus::Config
    );
    assert!(r.is_null());
}

#[test]
fn audit_and_cce_roundtrip() {
    let json = c(r#"{"profile": {"construction": "simple_grim", "N": 3, "K": 10}, "T": 100}"#);
    let mut a = ptr::null_mut();
    assert_eq!(
        unsafe { bertrand_audit_from_json(json.as_ptr(), &mut a) },
        BertrandStatus::Ok
    );
    let slack = unsafe { bertrand_audit_eq_slack(a) };
    assert!(slack > 0.0 && slack <= 2.0 / 100.0);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { bertrand_audit_json(a, &mut s) }, BertrandStatus::Ok);
    let report: serde_json::Value = serde_json::from_str(&unsafe { take(s) }).unwrap();
    assert_eq!(report["eq_slack"].as_f64().unwrap(), slack);
    unsafe { bertrand_audit_free(a) };

    let mut cce = ptr::null_mut();
    assert_eq!(unsafe { bertrand_cce_solve(2, 10, 1e-9, &mut cce) }, BertrandStatus::Ok);
    let obj = unsafe { bertrand_cce_objective(cce) };
    assert!((obj - 2.0 / std::f64::consts::E).abs() < 0.5);
    assert_eq!(unsafe { bertrand_cce_certify(cce, 1e-9) }, BertrandStatus::Ok);
    assert_eq!(unsafe { bertrand_cce_json(cce, &mut s) }, BertrandStatus::Ok);
    assert!(unsafe { take(s) }.contains("objective"));
    unsafe { bertrand_cce_free(cce) };
    assert_eq!(
        unsafe { bertrand_cce_solve(1, 10, 1e-9, &mut cce) },
        BertrandStatus::Usage
    );
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        bertrand_grid_free(ptr::null_mut());
        bertrand_profile_free(ptr::null_mut());
        bertrand_run_free(ptr::null_mut());
        bertrand_audit_free(ptr::null_mut());
        bertrand_cce_free(ptr::null_mut());
        bertrand_string_free(ptr::null_mut());
    }
    assert!(unsafe { bertrand_cce_objective(ptr::null()) }.is_nan());
}

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(manifest().join("include/bertrand.h")).unwrap();
    let src = std::fs::read_to_string(manifest().join("src/lib.rs")).unwrap();
    let exported: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exported.len() > 20);
    for f in exported {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    for s in [
        "BertrandGrid",
        "BertrandRun",
        "BERTRAND_STATUS_OK",
        "BERTRAND_STATUS_INTERNAL",
    ] {
        assert!(header.contains(s), "{s} missing from header");
    }
}

/// Builds the static library and returns its directory.
fn static_lib_dir() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?.to_path_buf();
    let status = Command::new(env!("CARGO"))
        .args(["build", "--quiet", "-p", "bertrand-ffi", "--lib"])
        .current_dir(manifest())
        .status()
        .ok()?;
    assert!(status.success(), "building the static library failed");
    dir.join("libbertrand_ffi.a").exists().then_some(dir)
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok()
}

#[test]
fn c_program_links_against_the_static_library() {
    if !have_cc() {
        eprintln!("skipping: no C compiler");
        return;
    }
    let dir = static_lib_dir().expect("static library next to the test binary");
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg(manifest().join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest().join("include"))
        .arg(dir.join("libbertrand_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(Path::new(&exe)).output().unwrap();
    assert!(
        out.status.success(),
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
