use std::ffi::{CStr, CString};
use std::ptr;

use dmabf_ffi::*;

fn last_error() -> String {
    let p = dmabf_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn config(toml: &str) -> *mut DmabfConfig {
    let text = CString::new(toml).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { dmabf_config_from_toml(text.as_ptr(), &mut cfg) }, DmabfStatus::Ok);
    cfg
}

#[test]
fn version_is_set() {
    let v = unsafe { CStr::from_ptr(dmabf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn experiment_round_trip() {
    let cfg = config("modes = [\"fd\", \"dma\"]\nrealizations = 2\nseed = 3\n");
    let (k, v) = (CString::new("k").unwrap(), CString::new("1,2").unwrap());
    assert_eq!(unsafe { dmabf_config_set(cfg, k.as_ptr(), v.as_ptr()) }, DmabfStatus::Ok);
    let mut exp = ptr::null_mut();
    assert_eq!(unsafe { dmabf_run(cfg, &mut exp) }, DmabfStatus::Ok);

    let mut n = 0;
    assert_eq!(unsafe { dmabf_experiment_len(exp, &mut n) }, DmabfStatus::Ok);
    assert_eq!(n, 8);
    let mut rec = std::mem::MaybeUninit::<DmabfRecord>::uninit();
    assert_eq!(unsafe { dmabf_experiment_record(exp, 1, rec.as_mut_ptr()) }, DmabfStatus::Ok);
    let rec = unsafe { rec.assume_init() };
    assert_eq!((rec.mode, rec.k, rec.status), (DmabfMode::Dma, 1, DmabfRunStatus::Converged));
    assert!(rec.tx_power_dbm.is_finite());

    let mut mean = 0.0;
    assert_eq!(unsafe { dmabf_experiment_mean_power_dbm(exp, DmabfMode::Fd, 2, &mut mean) }, DmabfStatus::Ok);
    assert!(mean.is_finite());
    assert_eq!(
        unsafe { dmabf_experiment_mean_power_dbm(exp, DmabfMode::Uw, 1, &mut mean) },
        DmabfStatus::InvalidArgument
    );

    let dir = tempfile::tempdir().unwrap();
    let csv = CString::new(dir.path().join("r.csv").to_str().unwrap()).unwrap();
    let json = CString::new(dir.path().join("r.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { dmabf_experiment_write_csv(exp, csv.as_ptr()) }, DmabfStatus::Ok);
    assert_eq!(unsafe { dmabf_experiment_write_json(exp, json.as_ptr()) }, DmabfStatus::Ok);
    assert_eq!(std::fs::read_to_string(dir.path().join("r.csv")).unwrap().lines().count(), 9);

    let mut oob = std::mem::MaybeUninit::<DmabfRecord>::uninit();
    assert_eq!(unsafe { dmabf_experiment_record(exp, 8, oob.as_mut_ptr()) }, DmabfStatus::InvalidArgument);
    assert!(last_error().contains("out of range"));

    unsafe {
        dmabf_experiment_free(exp);
        dmabf_config_free(cfg);
    }
}

#[test]
fn scenario_solve_matches_closed_form() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { dmabf_config_default(&mut cfg) }, DmabfStatus::Ok);
    // On boresight with g = 0 every element sees the same amplitude.
    let g = CString::new("gain_exponent").unwrap();
    let zero = CString::new("0").unwrap();
    assert_eq!(unsafe { dmabf_config_set(cfg, g.as_ptr(), zero.as_ptr()) }, DmabfStatus::Ok);
    let users = [0.0, 0.0, 1.0];
    let mut scn = ptr::null_mut();
    assert_eq!(
        unsafe { dmabf_scenario_new(cfg, DmabfMode::Fd, users.as_ptr(), 1, &mut scn) },
        DmabfStatus::Ok
    );
    let mut res = ptr::null_mut();
    assert_eq!(unsafe { dmabf_scenario_solve(scn, 1, &mut res) }, DmabfStatus::Ok);
    let mut p = 0.0;
    let mut status = DmabfRunStatus::Failed;
    unsafe {
        assert_eq!(dmabf_result_tx_power_watts(res, &mut p), DmabfStatus::Ok);
        assert_eq!(dmabf_result_status(res, &mut status), DmabfStatus::Ok);
    }
    assert_eq!(status, DmabfRunStatus::Converged);

    let lambda = 299_792_458.0 / 28e9;
    let d = lambda / 2.0;
    let mut norm = 0.0;
    for i in 0..4 {
        for l in 0..4 {
            let (x, y) = ((l as f64 - 1.5) * d, (i as f64 - 1.5) * d);
            let r2 = x * x + y * y + 1.0;
            norm += 2.0 * (lambda / (4.0 * std::f64::consts::PI)).powi(2) / r2;
        }
    }
    let oracle = 15.0 * 10f64.powf(-11.4) * 1e-3 / norm;
    assert!((p - oracle).abs() <= 1e-6 * oracle, "{p} vs {oracle}");

    let mut buf = [0.0; 1];
    let mut written = 0;
    assert_eq!(unsafe { dmabf_result_sinrs(res, buf.as_mut_ptr(), 1, &mut written) }, DmabfStatus::Ok);
    assert_eq!(written, 1);
    assert!(buf[0] >= 15.0 * (1.0 - 1e-6));
    assert_eq!(unsafe { dmabf_result_sinrs(res, buf.as_mut_ptr(), 0, &mut written) }, DmabfStatus::InvalidArgument);

    unsafe {
        dmabf_result_free(res);
        dmabf_scenario_free(scn);
        dmabf_config_free(cfg);
    }
}

#[test]
fn errors_map_to_codes() {
    let mut cfg = ptr::null_mut();
    let bad = CString::new("realizations = 0").unwrap();
    assert_eq!(unsafe { dmabf_config_from_toml(bad.as_ptr(), &mut cfg) }, DmabfStatus::Config);
    assert!(cfg.is_null());
    assert_eq!(unsafe { dmabf_config_from_toml(ptr::null(), &mut cfg) }, DmabfStatus::NullPointer);
    assert!(last_error().contains("toml"));

    let cfg = config("");
    let users = [0.0; 9];
    let mut scn = ptr::null_mut();
    // Eight users exceed the four RF chains.
    let many = [[0.01, 0.0, 1.0]; 8].concat();
    assert_eq!(
        unsafe { dmabf_scenario_new(cfg, DmabfMode::Dma, many.as_ptr(), 8, &mut scn) },
        DmabfStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { dmabf_scenario_new(cfg, DmabfMode::Fd, users.as_ptr(), 0, &mut scn) },
        DmabfStatus::InvalidArgument
    );
    let nowhere = CString::new("/nonexistent/x.csv").unwrap();
    assert_eq!(unsafe { dmabf_experiment_write_csv(ptr::null(), nowhere.as_ptr()) }, DmabfStatus::NullPointer);
    unsafe {
        dmabf_config_free(cfg);
        dmabf_config_free(ptr::null_mut());
    }
}

#[test]
fn lorentzian_projection() {
    let (mut re, mut im) = (0.0, 0.0);
    assert_eq!(unsafe { dmabf_lorentzian_project(0.0, 2.0, &mut re, &mut im) }, DmabfStatus::Ok);
    assert!((re - 0.0).abs() < 1e-15 && (im - 1.0).abs() < 1e-15);
    assert_eq!(unsafe { dmabf_lorentzian_project(3.0, 0.5, &mut re, &mut im) }, DmabfStatus::Ok);
    assert!((re - 0.5).abs() < 1e-15 && (im - 0.5).abs() < 1e-15);
    assert_eq!(
        unsafe { dmabf_lorentzian_project(f64::NAN, 0.0, &mut re, &mut im) },
        DmabfStatus::InvalidArgument
    );
    assert_eq!(unsafe { dmabf_lorentzian_project(0.0, 0.0, ptr::null_mut(), &mut im) }, DmabfStatus::NullPointer);
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/dmabf.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in ["dmabf_run", "dmabf_scenario_solve", "dmabf_lorentzian_project", "DMABF_STATUS_PANIC"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(status) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c", header])
        .status()
    else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(status.success());
}
