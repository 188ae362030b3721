use std::ffi::{CStr, CString};
use std::ptr;

use gdid::config::{run_estimate, EstimandChoice, EstimateConfig, LearnerChoice};
use gdid_ffi::*;

const TOY: &str = include_str!("../../core/data/toy_panel.csv");

fn last_error() -> String {
    let p = gdid_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn dataset(text: &str) -> *mut GdidDataset {
    let csv = CString::new(text).unwrap();
    let mut ds = ptr::null_mut();
    let st = unsafe { gdid_dataset_from_csv(csv.as_ptr(), ptr::null(), &mut ds) };
    assert_eq!(st, GdidStatus::Ok);
    ds
}

#[test]
fn estimate_matches_library() {
    let ds = dataset(TOY);
    assert_eq!(unsafe { gdid_dataset_n_units(ds) }, 96);
    let cfg_json = CString::new(r#"{"estimand":"did","learner":"parametric","pipeline":{"seed":3}}"#).unwrap();
    let mut res = ptr::null_mut();
    let st = unsafe { gdid_estimate(ds, cfg_json.as_ptr(), &mut res) };
    assert_eq!(st, GdidStatus::Ok);

    let mut sum = GdidSummary::default();
    assert_eq!(unsafe { gdid_result_summary(res, &mut sum) }, GdidStatus::Ok);
    let mut cfg = EstimateConfig {
        estimand: EstimandChoice::Did,
        learner: Some(LearnerChoice::Parametric),
        ..Default::default()
    };
    cfg.pipeline.seed = 3;
    let direct = run_estimate(&cfg, TOY).unwrap();
    assert_eq!(sum.tau_hat, direct.tau_hat);
    assert_eq!(sum.se, direct.se);
    assert_eq!((sum.ci_lower, sum.ci_upper), (direct.ci.lower, direct.ci.upper));
    assert_eq!(sum.n_treated, 24);

    let n = unsafe { gdid_result_influence_len(res) } as usize;
    assert_eq!(n, 96);
    let mut buf = vec![0.0; n];
    assert_eq!(
        unsafe { gdid_result_influence(res, buf.as_mut_ptr(), n as u64) },
        n as u64
    );
    assert_eq!(buf, direct.influence);

    let js = unsafe { gdid_result_json(res) };
    assert!(!js.is_null());
    let text = unsafe { CStr::from_ptr(js) }.to_str().unwrap().to_string();
    unsafe { gdid_string_free(js) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["estimand"], "did");
    assert_eq!(v["config_digest"].as_str().unwrap().len(), 64);

    unsafe {
        gdid_result_free(res);
        gdid_dataset_free(ds);
    }
}

#[test]
fn error_codes() {
    let mut ds = ptr::null_mut();
    let st = unsafe { gdid_dataset_from_csv(ptr::null(), ptr::null(), &mut ds) };
    assert_eq!(st, GdidStatus::NullPointer);
    assert!(ds.is_null());

    let bad = CString::new("unit,time,outcome,treatment\na,0,1.0,2\na,1,2.0,2\n").unwrap();
    let st = unsafe { gdid_dataset_from_csv(bad.as_ptr(), ptr::null(), &mut ds) };
    assert_eq!(st, GdidStatus::InvalidInput);
    assert!(!last_error().is_empty());

    let ds = dataset(TOY);
    let mut res = ptr::null_mut();
    let cfg = CString::new(r#"{"pipeline":{"trim_eps":0.9}}"#).unwrap();
    assert_eq!(
        unsafe { gdid_estimate(ds, cfg.as_ptr(), &mut res) },
        GdidStatus::InvalidInput
    );
    assert!(last_error().contains("trim_eps"));
    let cfg = CString::new("{not json").unwrap();
    assert_eq!(
        unsafe { gdid_estimate(ds, cfg.as_ptr(), &mut res) },
        GdidStatus::InvalidInput
    );
    assert!(res.is_null());
    let invalid_utf8 = [0xffu8, 0xfe, 0];
    let st = unsafe { gdid_estimate(ds, invalid_utf8.as_ptr().cast(), &mut res) };
    assert_eq!(st, GdidStatus::InvalidUtf8);
    assert_eq!(
        unsafe { gdid_result_summary(ptr::null(), ptr::null_mut()) },
        GdidStatus::NullPointer
    );
    assert!(unsafe { gdid_result_json(ptr::null()) }.is_null());
    unsafe {
        gdid_dataset_free(ds);
        gdid_dataset_free(ptr::null_mut());
        gdid_result_free(ptr::null_mut());
        gdid_string_free(ptr::null_mut());
    }
}

#[test]
fn success_clears_last_error() {
    let mut ds = ptr::null_mut();
    unsafe { gdid_dataset_from_csv(ptr::null(), ptr::null(), &mut ds) };
    assert!(!gdid_last_error().is_null());
    let ds = dataset(TOY);
    assert!(gdid_last_error().is_null());
    unsafe { gdid_dataset_free(ds) };
    let v = unsafe { CStr::from_ptr(gdid_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let h = include_str!("../include/gdid.h");
    for f in [
        "gdid_dataset_from_csv",
        "gdid_dataset_free",
        "gdid_estimate",
        "gdid_result_summary",
        "gdid_result_json",
        "gdid_result_free",
        "gdid_last_error",
        "gdid_string_free",
        "gdid_version",
        "GDID_STATUS_INVALID_INPUT = 3",
    ] {
        assert!(h.contains(f), "{f} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"gdid.h\"\nint main(void) { GdidSummary s; GdidDataset *d = 0; (void)s; \
         return gdid_dataset_from_csv(\"\", 0, &d) == GDID_STATUS_OK; }\n",
    )
    .unwrap();
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
