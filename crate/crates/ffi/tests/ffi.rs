use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use burgerslab_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(bl_last_error()) }.to_string_lossy().into_owned()
}

fn config(n: usize) -> *mut BlConfig {
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { bl_config_new(0.5, n, 1e-3, &mut c) }, BlStatus::Ok);
    c
}

fn state(coeffs: &[f64]) -> *mut BlState {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { bl_state_new(coeffs.as_ptr(), coeffs.len(), &mut s) }, BlStatus::Ok);
    s
}

fn coeffs(s: *const BlState) -> Vec<f64> {
    let n = unsafe { bl_state_n_modes(s) };
    let mut out = vec![0.0; n];
    assert_eq!(unsafe { bl_state_coeffs(s, out.as_mut_ptr(), n) }, BlStatus::Ok);
    out
}

#[test]
fn null_pointers_are_reported() {
    unsafe {
        assert_eq!(bl_config_new(0.5, 8, 1e-3, ptr::null_mut()), BlStatus::NullPointer);
        assert!(last_error().contains("null pointer"));
        let mut out = 0.0;
        assert_eq!(bl_state_norm(ptr::null(), BlNorm::L2, 0.0, &mut out), BlStatus::NullPointer);
        assert_eq!(bl_config_n_modes(ptr::null()), 0);
        bl_config_free(ptr::null_mut());
        bl_state_free(ptr::null_mut());
    }
}

#[test]
fn invalid_arguments_map_to_status_codes() {
    unsafe {
        let mut c = ptr::null_mut();
        assert_eq!(bl_config_new(-1.0, 8, 1e-3, &mut c), BlStatus::InvalidArgument);
        assert!(c.is_null());
        assert!(!last_error().is_empty());
        let s = state(&[1.0, 2.0]);
        let mut buf = [0.0; 3];
        assert_eq!(bl_state_coeffs(s, buf.as_mut_ptr(), 3), BlStatus::InvalidArgument);
        let mut out = 0.0;
        assert_eq!(bl_state_norm(s, BlNorm::Hs, 3.0, &mut out), BlStatus::InvalidArgument);
        assert_eq!(bl_heat_operator_norm(0.0, 0.5, 0.0, 1.0, &mut out), BlStatus::InvalidArgument);
        bl_state_free(s);
    }
}

#[test]
fn norms_match_the_library() {
    let s = state(&[1.0, 0.0, 0.5]);
    let mut l2 = 0.0;
    let mut v = 0.0;
    unsafe {
        assert_eq!(bl_state_norm(s, BlNorm::L2, 0.0, &mut l2), BlStatus::Ok);
        assert_eq!(bl_state_norm(s, BlNorm::Hs, 1.0, &mut v), BlStatus::Ok);
        bl_state_free(s);
    }
    // ‖Σ a_k sin kx‖² = π/2 Σ a_k², ‖∂ₓ·‖² = π/2 Σ k² a_k².
    let half_pi = std::f64::consts::FRAC_PI_2;
    assert!((l2 - (half_pi * 1.25).sqrt()).abs() < 1e-12);
    assert!((v - (half_pi * (1.0 + 9.0 * 0.25)).sqrt()).abs() < 1e-12);
}

#[test]
fn deterministic_run_decays_and_stochastic_run_is_reproducible() {
    let c = config(16);
    let u0 = state(&{
        let mut a = vec![0.0; 16];
        a[0] = 1.0;
        a
    });
    unsafe {
        let mut u = ptr::null_mut();
        assert_eq!(bl_simulate_deterministic(c, u0, 1.0, &mut u), BlStatus::Ok);
        let a = coeffs(u);
        assert!(a[0] > 0.0 && a[0] < 0.7);
        bl_state_free(u);

        let (mut x, mut y) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(bl_simulate(c, u0, 0.5, 3, 0, &mut x), BlStatus::Ok);
        assert_eq!(bl_simulate(c, u0, 0.5, 3, 0, &mut y), BlStatus::Ok);
        assert_eq!(coeffs(x), coeffs(y));
        bl_state_free(x);
        bl_state_free(y);

        let mut wrong = ptr::null_mut();
        let small = state(&[1.0]);
        assert_eq!(bl_simulate(c, small, 0.5, 3, 0, &mut wrong), BlStatus::InvalidArgument);
        bl_state_free(small);
        bl_state_free(u0);
        bl_config_free(c);
    }
}

#[test]
fn cfl_violation_has_its_own_code() {
    unsafe {
        let mut c = ptr::null_mut();
        assert_eq!(bl_config_new(0.5, 16, 0.5, &mut c), BlStatus::Ok);
        let u0 = state(&[50.0; 16]);
        let mut u = ptr::null_mut();
        assert_eq!(bl_simulate_deterministic(c, u0, 5.0, &mut u), BlStatus::CflViolation);
        assert!(last_error().contains("CFL"));
        bl_state_free(u0);
        bl_config_free(c);
    }
}

#[test]
fn steady_state_with_forcing() {
    let c = config(16);
    unsafe {
        let h = [0.0, 0.5];
        assert_eq!(bl_config_set_forcing(c, h.as_ptr(), 2), BlStatus::Ok);
        let mut u = ptr::null_mut();
        let mut residual = 1.0;
        assert_eq!(bl_steady_state(c, &mut u, &mut residual), BlStatus::Ok);
        assert!(residual < 1e-10);
        assert!(coeffs(u)[1] > 0.0);
        bl_state_free(u);
        let too_long = [0.0; 17];
        assert_eq!(bl_config_set_forcing(c, too_long.as_ptr(), 17), BlStatus::InvalidArgument);
        bl_config_free(c);
    }
}

#[test]
fn snapshots_round_trip_and_detect_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("u.snap");
    let path = CString::new(file.to_str().unwrap()).unwrap();
    let s = state(&[0.1, -0.2, 1.0 / 3.0]);
    unsafe {
        assert_eq!(bl_snapshot_save(path.as_ptr(), s, 2.5), BlStatus::Ok);
        let mut back = ptr::null_mut();
        let mut t = 0.0;
        assert_eq!(bl_snapshot_load(path.as_ptr(), &mut back, &mut t), BlStatus::Ok);
        assert_eq!(t, 2.5);
        assert_eq!(coeffs(back), coeffs(s));
        bl_state_free(back);

        let bytes = std::fs::read(&file).unwrap();
        std::fs::write(&file, &bytes[..bytes.len() - 1]).unwrap();
        let mut bad = ptr::null_mut();
        assert_eq!(bl_snapshot_load(path.as_ptr(), &mut bad, ptr::null_mut()), BlStatus::Format);
        let missing = CString::new(dir.path().join("none").to_str().unwrap()).unwrap();
        assert_eq!(bl_snapshot_load(missing.as_ptr(), &mut bad, ptr::null_mut()), BlStatus::Io);
        bl_state_free(s);
    }
}

#[test]
fn config_from_toml_reads_model_keys() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.toml");
    std::fs::write(&file, "n_modes = 24\nnu = 0.2\n[mixing]\nn_members = 3\n").unwrap();
    let path = CString::new(file.to_str().unwrap()).unwrap();
    unsafe {
        let mut c = ptr::null_mut();
        assert_eq!(bl_config_from_toml(path.as_ptr(), &mut c), BlStatus::Ok);
        assert_eq!(bl_config_n_modes(c), 24);
        bl_config_free(c);
        std::fs::write(&file, "n_mode = 24\n").unwrap();
        assert_eq!(bl_config_from_toml(path.as_ptr(), &mut c), BlStatus::InvalidArgument);
        assert!(last_error().contains("n_mode"));
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(bl_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "burgerslab.h"

int main(void) {
    BlConfig *cfg = NULL;
    BlState *u0 = NULL, *u = NULL;
    double a[8] = {1.0, 0, 0, 0, 0, 0, 0, 0};
    double l2 = 0.0;
    if (bl_config_new(0.5, 8, 1e-3, &cfg) != BL_STATUS_OK) return 1;
    if (bl_state_new(a, 8, &u0) != BL_STATUS_OK) return 2;
    if (bl_simulate_deterministic(cfg, u0, 0.5, &u) != BL_STATUS_OK) return 3;
    if (bl_state_norm(u, BL_NORM_L2, 0.0, &l2) != BL_STATUS_OK) return 4;
    if (bl_state_norm(NULL, BL_NORM_L2, 0.0, &l2) != BL_STATUS_NULL_POINTER) return 5;
    printf("%.6f %s\n", l2, bl_last_error());
    bl_state_free(u);
    bl_state_free(u0);
    bl_config_free(cfg);
    return 0;
}
"#;

/// Compiles and runs a C client against the header and static library.
/// Skipped when no C compiler or static library is available.
#[test]
fn c_client_links_and_runs() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap().to_path_buf();
    let lib = profile_dir.join("libburgerslab_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or {} missing", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    let bin = dir.path().join("client");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .status()
        .unwrap();
    assert!(status.success(), "C client failed to build");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C client exited with {:?}", out.status.code());
    let text = String::from_utf8(out.stdout).unwrap();
    let l2: f64 = text.split_whitespace().next().unwrap().parse().unwrap();
    assert!(l2 > 0.0 && l2 < (std::f64::consts::FRAC_PI_2).sqrt());
    assert!(text.contains("null pointer"));
}
