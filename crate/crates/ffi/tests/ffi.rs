use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use dwglm_ffi::*;

fn last_error() -> String {
    let p = dwglm_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn link_functions() {
    let mut v = f64::NAN;
    unsafe {
        assert_eq!(
            dwglm_link_inverse(DwglmLink::Cloglog, 0.0, &mut v),
            DwglmStatus::Ok
        );
        assert!((v - 0.632_120_558_828_557_7).abs() < 1e-15);
        assert_eq!(
            dwglm_link_inverse_derivative(DwglmLink::Probit, 0.0, &mut v),
            DwglmStatus::Ok
        );
        assert!((v - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(dwglm_link_g(DwglmLink::Logit, 0.5, &mut v), DwglmStatus::Ok);
        assert_eq!(v, 0.0);
        assert_eq!(
            dwglm_link_g(DwglmLink::Logit, 1.5, &mut v),
            DwglmStatus::Domain
        );
        assert!(last_error().contains("outside (0, 1)"));
        assert_eq!(
            dwglm_link_inverse(DwglmLink::Logit, f64::NAN, &mut v),
            DwglmStatus::Domain
        );
        assert_eq!(
            dwglm_link_g(DwglmLink::Logit, 0.5, ptr::null_mut()),
            DwglmStatus::NullPointer
        );
    }
}

#[test]
fn oracle_values() {
    let mut out = [0.0; 2];
    unsafe {
        assert_eq!(
            dwglm_true_psi1(ptr::null(), ptr::null(), out.as_mut_ptr()),
            DwglmStatus::Ok
        );
    }
    assert!((out[0] + 0.077172).abs() < 1e-5 && (out[1] + 0.108928).abs() < 1e-5);
    let theta = [0.0, 1.0, 0.0, -0.5, -0.1, 1.0, 0.0, 0.0, 0.0];
    let delta = [0.0, 0.0];
    unsafe {
        dwglm_true_psi1(theta.as_ptr(), delta.as_ptr(), out.as_mut_ptr());
    }
    assert_eq!(out, [-0.5, -0.1]);
}

#[test]
fn simulate_estimate_and_serialize() {
    unsafe {
        let mut data = ptr::null_mut();
        assert_eq!(
            dwglm_dataset_simulate_study1(800, 4, DwglmLink::Logit, 7, &mut data),
            DwglmStatus::Ok
        );
        assert_eq!(dwglm_dataset_n_subjects(data), 800);
        assert_eq!(dwglm_dataset_n_stages(data), 1);

        let mut est = ptr::null_mut();
        assert_eq!(
            dwglm_estimate(
                data,
                ptr::null(),
                DwglmMethod::M2,
                DwglmLink::Logit,
                25,
                1,
                &mut est
            ),
            DwglmStatus::Ok
        );
        assert_eq!(dwglm_estimate_n_stages(est), 1);
        assert_eq!(dwglm_estimate_psi_len(est, 1), 2);
        assert_eq!(dwglm_estimate_psi_len(est, 2), 0);
        let mut psi = [0.0; 2];
        assert_eq!(
            dwglm_estimate_psi(est, 1, psi.as_mut_ptr(), 2),
            DwglmStatus::Ok
        );
        assert_eq!(
            dwglm_estimate_psi(est, 1, psi.as_mut_ptr(), 1),
            DwglmStatus::BufferTooSmall
        );
        assert_eq!(
            dwglm_estimate_psi(est, 3, psi.as_mut_ptr(), 2),
            DwglmStatus::InvalidArgument
        );

        let mut json = ptr::null_mut();
        assert_eq!(dwglm_estimate_to_json(est, &mut json), DwglmStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        dwglm_string_free(json);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["method"], "m2");
        assert_eq!(value["stages"][0]["psi_hat"][0].as_f64().unwrap(), psi[0]);

        dwglm_estimate_free(est);
        dwglm_dataset_free(data);
        dwglm_dataset_free(ptr::null_mut());
    }
}

#[test]
fn argument_errors() {
    unsafe {
        let mut data = ptr::null_mut();
        assert_eq!(
            dwglm_dataset_simulate_study1(10, 9, DwglmLink::Logit, 0, &mut data),
            DwglmStatus::InvalidArgument
        );
        assert!(data.is_null());
        let mut est = ptr::null_mut();
        assert_eq!(
            dwglm_estimate(
                ptr::null(),
                ptr::null(),
                DwglmMethod::M0,
                DwglmLink::Logit,
                1,
                0,
                &mut est
            ),
            DwglmStatus::NullPointer
        );
        let path = CString::new("/nonexistent/data.csv").unwrap();
        let config = CString::new(
            r#"{"models": [{"treatment_free": ["x"], "blip": ["x"], "treatment": []}]}"#,
        )
        .unwrap();
        assert_eq!(
            dwglm_dataset_read_csv(path.as_ptr(), config.as_ptr(), &mut data),
            DwglmStatus::Io
        );
        let bad =
            CString::new(r#"{"models": [{"treatment_free": [], "blip": ["x"], "treatment": []}]}"#)
                .unwrap();
        assert_eq!(
            dwglm_dataset_read_csv(path.as_ptr(), bad.as_ptr(), &mut data),
            DwglmStatus::Config
        );
        assert!(last_error().contains("blip term 'x'"));
    }
}

#[test]
fn read_csv_with_models_from_config() {
    let dir = std::env::temp_dir().join(format!("dwglm-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("d.csv");
    let mut text = String::from("id,stage,a,x,y\n");
    for i in 0..200 {
        let x = (i as f64 * 0.731).sin();
        let a = (i * 7 % 3 == 0) as u8;
        let y = ((i * 13 % 5) < 2 + a as usize) as u8;
        text.push_str(&format!("{i},1,{a},{x},{y}\n"));
    }
    std::fs::write(&path, text).unwrap();
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let config =
        CString::new(r#"{"models": [{"treatment_free": ["x"], "blip": [], "treatment": ["x"]}]}"#)
            .unwrap();
    unsafe {
        let mut data = ptr::null_mut();
        assert_eq!(
            dwglm_dataset_read_csv(cpath.as_ptr(), config.as_ptr(), &mut data),
            DwglmStatus::Ok
        );
        assert_eq!(dwglm_dataset_n_subjects(data), 200);
        let mut est = ptr::null_mut();
        assert_eq!(
            dwglm_estimate(
                data,
                ptr::null(),
                DwglmMethod::M1,
                DwglmLink::Logit,
                1,
                0,
                &mut est
            ),
            DwglmStatus::Ok
        );
        assert_eq!(dwglm_estimate_psi_len(est, 1), 1);
        dwglm_estimate_free(est);
        dwglm_dataset_free(data);
    }
    std::fs::remove_dir_all(dir).unwrap();
}

fn target_dir() -> PathBuf {
    // <target>/<profile>/deps/ffi-<hash>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include <math.h>
#include "dwglm.h"

int main(void) {
    double v = 0.0;
    if (dwglm_link_inverse(DWGLM_LINK_LOGIT, 0.0, &v) != DWGLM_STATUS_OK || v != 0.5) return 1;
    if (dwglm_link_g(DWGLM_LINK_PROBIT, 2.0, &v) != DWGLM_STATUS_DOMAIN) return 2;
    if (dwglm_last_error() == NULL) return 3;
    double psi1[2];
    dwglm_true_psi1(NULL, NULL, psi1);
    if (fabs(psi1[0] + 0.077172) > 1e-5) return 4;
    DwglmDataset *data = NULL;
    if (dwglm_dataset_simulate_study1(400, 4, DWGLM_LINK_LOGIT, 3, &data) != DWGLM_STATUS_OK) return 5;
    DwglmEstimate *est = NULL;
    if (dwglm_estimate(data, NULL, DWGLM_METHOD_M2, DWGLM_LINK_LOGIT, 25, 0, &est) != DWGLM_STATUS_OK) return 6;
    double psi[2];
    if (dwglm_estimate_psi(est, 1, psi, 2) != DWGLM_STATUS_OK) return 7;
    printf("%.6f %.6f\n", psi[0], psi[1]);
    dwglm_estimate_free(est);
    dwglm_dataset_free(data);
    return 0;
}
"#;

#[test]
fn c_program_links_against_static_library() {
    let lib = target_dir().join("libdwglm_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = std::env::temp_dir().join(format!("dwglm-c-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let src = dir.join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.join("main");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.split_whitespace().count(), 2);
    std::fs::remove_dir_all(dir).unwrap();
}
