use std::ffi::{CStr, CString};
use std::ptr;

use fairtriage_ffi::*;

fn last_error() -> String {
    let p = ft_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn toy() -> (Vec<f64>, Vec<u8>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..60 {
        let a = (i % 10) as f64 / 10.0;
        let b = ((i * 7) % 13) as f64 / 13.0;
        x.extend([a, b]);
        y.push(u8::from(a + 0.2 * b > 0.5));
    }
    (x, y)
}

#[test]
fn version_and_cdf() {
    let v = unsafe { CStr::from_ptr(ft_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    assert!((ft_normal_cdf(0.0) - 0.5).abs() < 1e-12);
}

#[test]
fn ztest_and_bad_input() {
    let mut out = FtZTest::default();
    let s = unsafe { ft_ztest(0.2, 500, 0.3, 400, 0.05, &mut out) };
    assert_eq!(s, FtStatus::Ok);
    assert!(out.significant && out.z_abs > 3.0);

    let s = unsafe { ft_ztest(1.5, 10, 0.3, 10, 0.05, &mut out) };
    assert_eq!(s, FtStatus::InvalidArgument);
    assert!(!last_error().is_empty());

    let s = unsafe { ft_ztest(0.2, 10, 0.3, 10, 0.05, ptr::null_mut()) };
    assert_eq!(s, FtStatus::NullPointer);
    assert!(last_error().contains("out"));
}

#[test]
fn auc_and_threshold() {
    let y = [0u8, 0, 1, 1];
    let s = [0.1, 0.4, 0.35, 0.8];
    let mut auc = 0.0;
    assert_eq!(unsafe { ft_auc(y.as_ptr(), s.as_ptr(), 4, &mut auc) }, FtStatus::Ok);
    assert!((auc - 0.75).abs() < 1e-12);

    let mut t = 0.0;
    assert_eq!(
        unsafe { ft_select_threshold_f1(y.as_ptr(), s.as_ptr(), 4, &mut t) },
        FtStatus::Ok
    );
    assert_eq!(t, 0.35);

    let one = [1u8, 1];
    assert_eq!(
        unsafe { ft_auc(one.as_ptr(), s.as_ptr(), 2, &mut auc) },
        FtStatus::SingleClass
    );
}

#[test]
fn model_lifecycle() {
    let (x, y) = toy();
    let spec = CString::new(r#"{"kind":"logistic_regression"}"#).unwrap();
    let mut model = ptr::null_mut();
    let s = unsafe { ft_model_fit(spec.as_ptr(), x.as_ptr(), 60, 2, y.as_ptr(), ptr::null(), &mut model) };
    assert_eq!(s, FtStatus::Ok);

    let mut d = 0usize;
    assert_eq!(unsafe { ft_model_n_features(model, &mut d) }, FtStatus::Ok);
    assert_eq!(d, 2);

    let mut p = vec![0.0; 60];
    assert_eq!(
        unsafe { ft_model_predict_proba(model, x.as_ptr(), 60, 2, p.as_mut_ptr()) },
        FtStatus::Ok
    );
    assert!(p[9] > p[0]);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { ft_model_save(model, path.as_ptr()) }, FtStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { ft_model_load(path.as_ptr(), &mut loaded) }, FtStatus::Ok);
    let mut q = vec![0.0; 60];
    assert_eq!(
        unsafe { ft_model_predict_proba(loaded, x.as_ptr(), 60, 2, q.as_mut_ptr()) },
        FtStatus::Ok
    );
    assert_eq!(p, q);

    // wrong width
    assert_eq!(
        unsafe { ft_model_predict_proba(model, x.as_ptr(), 40, 3, q.as_mut_ptr()) },
        FtStatus::LengthMismatch
    );
    unsafe {
        ft_model_free(model);
        ft_model_free(loaded);
        ft_model_free(ptr::null_mut());
    }
}

#[test]
fn model_errors() {
    let (x, y) = toy();
    let mut model = ptr::null_mut();
    let bad = CString::new(r#"{"kind":"perceptron"}"#).unwrap();
    let s = unsafe { ft_model_fit(bad.as_ptr(), x.as_ptr(), 60, 2, y.as_ptr(), ptr::null(), &mut model) };
    assert_eq!(s, FtStatus::Parse);
    assert!(model.is_null());

    let missing = CString::new("/nonexistent/model.json").unwrap();
    assert_eq!(unsafe { ft_model_load(missing.as_ptr(), &mut model) }, FtStatus::Io);
    assert!(last_error().contains("/nonexistent/model.json"));
}

#[test]
fn bundled_schema() {
    let mut schema = ptr::null_mut();
    assert_eq!(unsafe { ft_schema_load(ptr::null(), &mut schema) }, FtStatus::Ok);
    let mut n = 0usize;
    assert_eq!(unsafe { ft_schema_feature_count(schema, &mut n) }, FtStatus::Ok);
    assert!(n > 100);
    unsafe { ft_schema_free(schema) };
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/fairtriage.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ FtZTest z; return ft_ztest(0.1, 10, 0.2, 10, 0.05, &z) == FT_STATUS_OK ? 0 : 1; }}\n"
        ),
    )
    .unwrap();
    let Ok(out) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
