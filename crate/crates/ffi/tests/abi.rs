use std::ffi::{CStr, CString};
use std::ptr;

use gkdv_ffi::*;

fn last_error() -> String {
    let p = gkdv_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn field_round_trip_through_snapshot() {
    let values: Vec<f64> = (0..256).map(|i| (i as f64 * 0.1).sin()).collect();
    let mut f = ptr::null_mut();
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("f.snap").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(gkdv_field_new(32.0, 256, values.as_ptr(), 1.5, &mut f), GkdvStatus::Ok);
        assert_eq!(gkdv_field_len(f), 256);
        assert_eq!(gkdv_snapshot_save(f, path.as_ptr()), GkdvStatus::Ok);
        let mut g = ptr::null_mut();
        assert_eq!(gkdv_snapshot_load(path.as_ptr(), &mut g), GkdvStatus::Ok);
        let mut back = vec![0.0; 256];
        assert_eq!(gkdv_field_values(g, back.as_mut_ptr(), back.len()), GkdvStatus::Ok);
        assert_eq!(back, values);
        let (mut length, mut t) = (0.0, 0.0);
        assert_eq!(gkdv_field_info(g, &mut length, &mut t), GkdvStatus::Ok);
        assert_eq!((length, t), (32.0, 1.5));
        gkdv_field_free(f);
        gkdv_field_free(g);
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut f = ptr::null_mut();
    unsafe {
        assert_eq!(gkdv_field_new(32.0, 256, ptr::null(), 0.0, &mut f), GkdvStatus::NullPointer);
        assert!(last_error().contains("values"));
        let v = vec![0.0; 100];
        assert_eq!(gkdv_field_new(32.0, 100, v.as_ptr(), 0.0, &mut f), GkdvStatus::InvalidArgument);
        let missing = CString::new("/nonexistent/dir/x.snap").unwrap();
        assert_eq!(gkdv_snapshot_load(missing.as_ptr(), &mut f), GkdvStatus::Io);
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.snap");
        std::fs::write(&bad, b"not a snapshot at all, definitely").unwrap();
        let bad = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(gkdv_snapshot_load(bad.as_ptr(), &mut f), GkdvStatus::Format);
        let mut buf = [0.0; 4];
        assert_eq!(gkdv_field_values(ptr::null(), buf.as_mut_ptr(), 4), GkdvStatus::NullPointer);
        gkdv_field_free(ptr::null_mut());
        assert_eq!(gkdv_field_len(ptr::null()), 0);
    }
}

#[test]
fn soliton_conserved_and_evolved() {
    let mut u = ptr::null_mut();
    unsafe {
        assert_eq!(gkdv_soliton(6, 1.0, 0.0, 0.0, 64.0, 1024, &mut u), GkdvStatus::Ok);
        let (mut m0, mut e0) = (0.0, 0.0);
        assert_eq!(gkdv_field_conserved(u, 6, &mut m0, &mut e0), GkdvStatus::Ok);
        assert!(m0 > 0.0);
        let mut w = ptr::null_mut();
        assert_eq!(gkdv_evolve(u, 6, 0.1, 0.0, &mut w), GkdvStatus::Ok);
        let (mut m1, mut e1) = (0.0, 0.0);
        assert_eq!(gkdv_field_conserved(w, 6, &mut m1, &mut e1), GkdvStatus::Ok);
        assert!(((m1 - m0) / m0).abs() < 1e-10);
        let (mut length, mut t) = (0.0, 0.0);
        gkdv_field_info(w, &mut length, &mut t);
        assert_eq!(t, 0.1);
        gkdv_field_free(u);
        gkdv_field_free(w);
    }
}

#[test]
fn subcritical_spectrum_is_rejected() {
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(gkdv_spectrum_compute(4, 80.0, 512, ptr::null(), &mut s), GkdvStatus::Numerical);
        assert!(last_error().contains("no positive real eigenvalue"));
        assert!(s.is_null());
    }
}

#[test]
fn run_reports_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"p": 1}"#).unwrap();
    let cmd = CString::new("profile").unwrap();
    let cfg = CString::new(cfg.to_str().unwrap()).unwrap();
    let out = CString::new(dir.path().join("out").to_str().unwrap()).unwrap();
    unsafe {
        assert_eq!(gkdv_run(cmd.as_ptr(), cfg.as_ptr(), out.as_ptr()), 2);
        let unknown = CString::new("plot").unwrap();
        assert_eq!(gkdv_run(unknown.as_ptr(), ptr::null(), ptr::null()), -1);
        assert!(last_error().contains("unknown command"));
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(gkdv_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
