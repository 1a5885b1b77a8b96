use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use lorga_ffi::*;

fn last_error() -> String {
    let p = lorga_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn matrix(rows: usize, cols: usize, data: &[f64]) -> *mut LorgaMatrix {
    let mut m = ptr::null_mut();
    let st = unsafe { lorga_matrix_new(rows, cols, data.as_ptr(), &mut m) };
    assert_eq!(st, LorgaStatus::Ok, "{}", last_error());
    m
}

fn network(json: &str) -> *mut LorgaNetwork {
    let spec = CString::new(json).unwrap();
    let mut net = ptr::null_mut();
    let st = unsafe { lorga_network_new(spec.as_ptr(), &mut net) };
    assert_eq!(st, LorgaStatus::Ok, "{}", last_error());
    net
}

fn data_of(m: *const LorgaMatrix) -> (usize, usize, Vec<f64>) {
    let (mut r, mut c) = (0, 0);
    assert_eq!(unsafe { lorga_matrix_shape(m, &mut r, &mut c) }, LorgaStatus::Ok);
    let mut buf = vec![0.0; r * c];
    assert_eq!(unsafe { lorga_matrix_copy_data(m, buf.as_mut_ptr(), buf.len()) }, LorgaStatus::Ok);
    (r, c, buf)
}

#[test]
fn matrix_roundtrip_and_shape_checks() {
    let values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let m = matrix(2, 3, &values);
    let (r, c, back) = data_of(m);
    assert_eq!((r, c), (2, 3));
    assert_eq!(back, values);

    let mut small = [0.0; 5];
    let st = unsafe { lorga_matrix_copy_data(m, small.as_mut_ptr(), small.len()) };
    assert_eq!(st, LorgaStatus::ShapeMismatch);
    assert!(last_error().contains("5"));
    unsafe { lorga_matrix_free(m) };
}

#[test]
fn non_finite_and_null_inputs_are_rejected() {
    let mut m = ptr::null_mut();
    let bad = [1.0, f64::NAN];
    assert_eq!(unsafe { lorga_matrix_new(1, 2, bad.as_ptr(), &mut m) }, LorgaStatus::NonFinite);
    assert!(m.is_null());
    assert_eq!(unsafe { lorga_matrix_new(1, 2, ptr::null(), &mut m) }, LorgaStatus::NullPointer);
    assert_eq!(unsafe { lorga_matrix_new(1, 2, bad.as_ptr(), ptr::null_mut()) }, LorgaStatus::NullPointer);
    let (mut r, mut c) = (0, 0);
    assert_eq!(unsafe { lorga_matrix_shape(ptr::null(), &mut r, &mut c) }, LorgaStatus::NullPointer);
    unsafe {
        lorga_matrix_free(ptr::null_mut());
        lorga_network_free(ptr::null_mut());
        lorga_string_free(ptr::null_mut());
    }
}

#[test]
fn singular_values_match_closed_form() {
    // Rotation times diag(5, 1): singular values are 5 and 1.
    let (c, s) = (0.6_f64, 0.8_f64);
    let m = matrix(2, 2, &[5.0 * c, -s, 5.0 * s, c]);
    let mut out = [0.0; 2];
    let mut n = 0;
    assert_eq!(unsafe { lorga_matrix_singular_values(m, out.as_mut_ptr(), out.len(), &mut n) }, LorgaStatus::Ok);
    assert_eq!(n, 2);
    assert!((out[0] - 5.0).abs() < 1e-12 && (out[1] - 1.0).abs() < 1e-12, "{out:?}");

    let mut short = [0.0; 1];
    assert_eq!(unsafe { lorga_matrix_singular_values(m, short.as_mut_ptr(), 1, &mut n) }, LorgaStatus::ShapeMismatch);
    unsafe { lorga_matrix_free(m) };
}

#[test]
fn lga1_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.lga1").to_str().unwrap()).unwrap();
    let values: Vec<f64> = (0..12).map(|i| (i as f64).sqrt() - 1.5).collect();
    let m = matrix(3, 4, &values);
    assert_eq!(unsafe { lorga_matrix_write_lga1(m, path.as_ptr()) }, LorgaStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { lorga_matrix_read_lga1(path.as_ptr(), &mut back) }, LorgaStatus::Ok);
    assert_eq!(data_of(back), (3, 4, values));

    let missing = CString::new(dir.path().join("nope.lga1").to_str().unwrap()).unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { lorga_matrix_read_lga1(missing.as_ptr(), &mut none) }, LorgaStatus::Io);
    unsafe {
        lorga_matrix_free(m);
        lorga_matrix_free(back);
    }
}

#[test]
fn network_forward_loss_and_ga_init() {
    let net = network(r#"{"layer_dims":[6,10,3],"activation":"tanh","loss":"mse","init_seed":4}"#);
    let n = 24;
    let xs: Vec<f64> = (0..6 * n).map(|i| ((i * 7 % 13) as f64 - 6.0) / 5.0).collect();
    let ts: Vec<f64> = (0..3 * n).map(|i| ((i * 5 % 11) as f64 - 5.0) / 4.0).collect();
    let x = matrix(6, n, &xs);
    let t = matrix(3, n, &ts);

    let mut y = ptr::null_mut();
    assert_eq!(unsafe { lorga_network_forward(net, x, &mut y) }, LorgaStatus::Ok);
    let (yr, yc, y_before) = data_of(y);
    assert_eq!((yr, yc), (3, n));

    let mut loss = 0.0;
    assert_eq!(unsafe { lorga_network_loss(net, x, t, &mut loss) }, LorgaStatus::Ok);
    assert!(loss.is_finite() && loss > 0.0);

    let cfg = CString::new(r#"{"rank":1,"alpha":4,"gamma":4,"sampled_batch_size":12,"seed":9}"#).unwrap();
    let mut adapted = ptr::null_mut();
    let mut report = ptr::null_mut();
    let st = unsafe { lorga_lora_ga_init(net, cfg.as_ptr(), x, t, &mut adapted, &mut report) };
    assert_eq!(st, LorgaStatus::Ok, "{}", last_error());

    let json: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(report) }.to_str().unwrap()).unwrap();
    assert_eq!(json["layers"].as_array().unwrap().len(), 2);
    assert_eq!(json["sampled_indices"].as_array().unwrap().len(), 12);

    let mut y2 = ptr::null_mut();
    assert_eq!(unsafe { lorga_network_forward(adapted, x, &mut y2) }, LorgaStatus::Ok);
    let (_, _, y_after) = data_of(y2);
    let diff = y_before.iter().zip(&y_after).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-10, "output moved by {diff}");

    // A rank too large for the 3-wide output layer names that layer.
    let too_big = CString::new(r#"{"rank":2,"alpha":4,"gamma":4,"sampled_batch_size":12}"#).unwrap();
    let mut none = ptr::null_mut();
    let st = unsafe { lorga_lora_ga_init(net, too_big.as_ptr(), x, t, &mut none, ptr::null_mut()) };
    assert_eq!(st, LorgaStatus::InvalidArgument);
    assert!(last_error().contains("layer 1"), "{}", last_error());
    assert!(none.is_null());

    unsafe {
        lorga_string_free(report);
        lorga_matrix_free(y);
        lorga_matrix_free(y2);
        lorga_matrix_free(x);
        lorga_matrix_free(t);
        lorga_network_free(adapted);
        lorga_network_free(net);
    }
}

#[test]
fn bad_json_is_an_invalid_argument() {
    let spec = CString::new(r#"{"layer_dims":[2]"#).unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(unsafe { lorga_network_new(spec.as_ptr(), &mut net) }, LorgaStatus::InvalidArgument);
    let spec = CString::new(r#"{"layer_dims":[2],"activation":"tanh","loss":"mse","init_seed":0}"#).unwrap();
    assert_eq!(unsafe { lorga_network_new(spec.as_ptr(), &mut net) }, LorgaStatus::InvalidArgument);
    assert!(net.is_null());
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(lorga_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

/// Compiles `tests/c/smoke.c` against the generated header and the static
/// library, then runs it.
#[test]
fn c_program_links_against_header() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header_dir = manifest.join("include");
    assert!(header_dir.join("lorga.h").exists(), "header was not generated");

    // `cargo test` only builds the rlib, so build the static library into a
    // private target directory.
    let target_dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("staticlib");
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let status = Command::new(cargo)
        .args(["build", "--quiet", "--lib", "-p", "lorga-ffi", "--target-dir"])
        .arg(&target_dir)
        .current_dir(&manifest)
        .status()
        .expect("cargo");
    assert!(status.success(), "building the static library failed");
    let staticlib = target_dir.join("debug").join("liblorga_ffi.a");
    assert!(staticlib.exists(), "missing {}", staticlib.display());

    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out_dir = tempfile::tempdir().unwrap();
    let bin = out_dir.path().join("smoke");
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&header_dir)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&staticlib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler");
    assert!(status.success(), "C compilation failed");

    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C smoke test failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
