use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use spikebasin_ffi::*;

fn last_error() -> String {
    let p = sb_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn two_spikes() -> *mut SbSpikeTrain {
    let mut train = ptr::null_mut();
    let status = sb_spike_train_new(2, 1, 1.0, 2.0, [1.0, -1.5].as_ptr(), [-0.7, 0.6].as_ptr(), &mut train);
    assert_eq!(status, SbStatus::Ok);
    train
}

#[test]
fn objective_round_trip() {
    unsafe {
        let truth = two_spikes();
        let mut separated = false;
        assert_eq!(sb_spike_train_is_separated(truth, &mut separated), SbStatus::Ok);
        assert!(separated);

        let mut op = ptr::null_mut();
        assert_eq!(sb_operator_gaussian(300, 0.5, 1, 7, &mut op), SbStatus::Ok);
        let mut m = 0;
        assert_eq!(sb_operator_m(op, &mut m), SbStatus::Ok);
        assert_eq!(m, 300);

        let mut obj = ptr::null_mut();
        assert_eq!(sb_objective_noiseless(op, truth, &mut obj), SbStatus::Ok);
        let mut dim = 0;
        assert_eq!(sb_objective_dim(obj, &mut dim), SbStatus::Ok);
        assert_eq!(dim, 4);

        let at_truth = [1.0, -1.5, -0.7, 0.6];
        let mut g = f64::NAN;
        assert_eq!(sb_objective_eval(obj, at_truth.as_ptr(), 4, &mut g), SbStatus::Ok);
        assert_eq!(g, 0.0);

        let theta = [1.1, -1.4, -0.68, 0.63];
        let mut grad = [0.0; 4];
        assert_eq!(sb_objective_gradient(obj, theta.as_ptr(), 4, grad.as_mut_ptr()), SbStatus::Ok);
        let h = 1e-6;
        for i in 0..4 {
            let (mut up, mut down) = (theta, theta);
            up[i] += h;
            down[i] -= h;
            let (mut gu, mut gd) = (0.0, 0.0);
            sb_objective_eval(obj, up.as_ptr(), 4, &mut gu);
            sb_objective_eval(obj, down.as_ptr(), 4, &mut gd);
            assert!(((gu - gd) / (2.0 * h) - grad[i]).abs() <= 1e-6 * grad[i].abs().max(1.0));
        }

        let mut hess = [0.0; 16];
        assert_eq!(sb_objective_hessian(obj, at_truth.as_ptr(), 4, hess.as_mut_ptr()), SbStatus::Ok);
        // amplitude diagonal of G at a noiseless minimum is 2 with unit-weight normalized columns
        assert!((hess[0] - 2.0).abs() < 1e-12 && (hess[5] - 2.0).abs() < 1e-12);
        for i in 0..4 {
            for j in 0..4 {
                assert!((hess[i * 4 + j] - hess[j * 4 + i]).abs() < 1e-12);
            }
        }

        let mut x = [1.0 + 1e-3, -1.5, -0.7 - 1e-3, 0.6];
        let (mut iters, mut term) = (0, SbTermination::Diverged);
        let status = sb_descend(obj, x.as_mut_ptr(), 4, 1e-3, 100_000, 1e-10, &mut iters, &mut term);
        assert_eq!(status, SbStatus::Ok);
        assert_eq!(term, SbTermination::GradTol);
        assert!(iters > 0);
        for (a, b) in x.iter().zip(at_truth) {
            assert!((a - b).abs() < 1e-6);
        }

        let mut json = ptr::null_mut();
        assert_eq!(sb_spike_train_to_json(truth, &mut json), SbStatus::Ok);
        assert!(CStr::from_ptr(json).to_str().unwrap().contains("amplitudes"));
        sb_string_free(json);

        sb_objective_free(obj);
        sb_operator_free(op);
        sb_spike_train_free(truth);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut train = ptr::null_mut();
        // 0.5 apart is allowed in the parameter space but not separated at epsilon = 1
        let status = sb_spike_train_new(2, 1, 1.0, 2.0, [1.0, 1.0].as_ptr(), [0.0, 0.5].as_ptr(), &mut train);
        assert_eq!(status, SbStatus::Ok);
        let mut separated = true;
        sb_spike_train_is_separated(train, &mut separated);
        assert!(!separated);

        let mut bad = ptr::null_mut();
        assert_eq!(sb_spike_train_new(0, 1, 1.0, 2.0, ptr::null(), ptr::null(), &mut bad), SbStatus::InvalidArgument);
        assert!(last_error().contains("k"));
        assert!(bad.is_null());

        assert_eq!(sb_spike_train_new(1, 1, 1.0, 2.0, ptr::null(), [0.0].as_ptr(), &mut bad), SbStatus::NullPointer);
        assert!(last_error().contains("amplitudes"));

        let mut op = ptr::null_mut();
        sb_operator_gaussian(50, 0.5, 1, 1, &mut op);
        let mut obj = ptr::null_mut();
        sb_objective_noiseless(op, train, &mut obj);
        let mut g = 0.0;
        assert_eq!(sb_objective_eval(obj, [1.0, 2.0].as_ptr(), 2, &mut g), SbStatus::DimensionMismatch);
        assert_eq!(sb_objective_eval(ptr::null(), [1.0].as_ptr(), 1, &mut g), SbStatus::NullPointer);

        let missing = CString::new("/nonexistent/op.json").unwrap();
        let mut from_file = ptr::null_mut();
        assert_eq!(sb_operator_from_json(missing.as_ptr(), &mut from_file), SbStatus::Io);

        // success clears the message
        let mut m = 0;
        sb_operator_m(op, &mut m);
        assert!(sb_last_error_message().is_null());

        sb_objective_free(obj);
        sb_operator_free(op);
        sb_spike_train_free(train);
        sb_spike_train_free(ptr::null_mut());
    }
}

#[test]
fn certificate_from_constants_matches_hand_values() {
    unsafe {
        let mut theta = ptr::null_mut();
        assert_eq!(sb_spike_train_new(1, 1, 0.4, 2.0, [1.0].as_ptr(), [0.0].as_ptr(), &mut theta), SbStatus::Ok);
        let mut cert = std::mem::zeroed::<SbCertificate>();
        assert_eq!(sb_certify_constants(theta, 1.0, 0.0, 0.0, 2.0, 1, -1.0, 0.5, &mut cert), SbStatus::Ok);
        let c2 = 0.25 / (2.0 * 3f64.sqrt());
        assert!((cert.c1 - 0.5).abs() < 1e-12);
        assert!((cert.c2_or_c3 - c2).abs() < 1e-12);
        assert!((cert.beta_max - 0.5 * c2).abs() < 1e-12);
        assert!((cert.tau_max * cert.lipschitz - 1.0).abs() < 1e-12);
        assert!(cert.noise_budget.is_nan());
        assert!(!cert.vacuous);

        assert_eq!(sb_certify_constants(theta, 1.0, 0.0, 0.0, 2.0, 1, 0.0, 0.5, &mut cert), SbStatus::Ok);
        assert!((cert.c2_or_c3 - 0.25 / (2.0 * (1.0 + 3f64.sqrt()))).abs() < 1e-12);

        assert_eq!(sb_certify_constants(theta, 1.0, 0.0, 0.0, 2.0, 1, 1.0, 0.5, &mut cert), SbStatus::Vacuous);
        assert!(last_error().contains("budget"));
        sb_spike_train_free(theta);
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(sb_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Compiles a small C program against the generated header and static library.
#[test]
fn c_program_links_against_header() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = crate_dir.join("include");
    assert!(header_dir.join("spikebasin.h").exists());
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|p| p.parent()).unwrap();
    let lib = profile_dir.join("libspikebasin_ffi.a");
    assert!(lib.exists(), "missing {}", lib.display());

    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <math.h>
#include <stdio.h>
#include "spikebasin.h"

int main(void) {
    double amps[2] = {1.0, -1.5};
    double pos[2] = {-0.7, 0.6};
    SbSpikeTrain *truth = NULL;
    SbOperator *op = NULL;
    SbObjective *obj = NULL;
    if (sb_spike_train_new(2, 1, 1.0, 2.0, amps, pos, &truth) != SB_STATUS_OK) return 1;
    if (sb_operator_gaussian(200, 0.5, 1, 3, &op) != SB_STATUS_OK) return 2;
    if (sb_objective_noiseless(op, truth, &obj) != SB_STATUS_OK) return 3;
    double theta[4] = {1.0, -1.5, -0.7, 0.6};
    double g = -1.0;
    if (sb_objective_eval(obj, theta, 4, &g) != SB_STATUS_OK || g != 0.0) return 4;
    if (sb_objective_eval(obj, theta, 3, &g) != SB_STATUS_DIMENSION_MISMATCH) return 5;
    if (sb_last_error_message() == NULL) return 6;
    SbCertificate cert;
    if (sb_certify_constants(truth, 0.5, 0.0, 0.0, 1.0, 1, -1.0, 0.5, &cert) != SB_STATUS_OK) return 7;
    if (!(cert.beta_max > 0.0) || fabs(cert.tau_max * cert.lipschitz - 1.0) > 1e-12) return 8;
    sb_objective_free(obj);
    sb_operator_free(op);
    sb_spike_train_free(truth);
    printf("ok %s\n", sb_version());
    return 0;
}
"#,
    )
    .unwrap();
    let bin = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("run cc");
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
