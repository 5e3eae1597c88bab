use std::ffi::{c_void, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use active_subspace_ffi::*;

fn last_error() -> String {
    let p = as_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Fixture {
    space: *mut AsSpace,
    measure: *mut AsMeasure,
}

impl Fixture {
    fn new(n: usize) -> Self {
        let mut space = ptr::null_mut();
        let mut measure = ptr::null_mut();
        unsafe {
            assert_eq!(as_space_new_unit_square(n, n, &mut space), AsStatus::Ok);
            assert_eq!(
                as_measure_new_separable_sine(space, 4, 2.0, 1.0, &mut measure),
                AsStatus::Ok
            );
        }
        Fixture { space, measure }
    }

    fn len(&self) -> usize {
        unsafe { as_space_len(self.space) }
    }

    fn field(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let n = (self.len() as f64).sqrt() as usize;
        let h = 1.0 / (n - 1) as f64;
        (0..self.len())
            .map(|k| f((k % n) as f64 * h, (k / n) as f64 * h))
            .collect()
    }

    fn ip(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut r = 0.0;
        unsafe {
            assert_eq!(
                as_space_inner_product(self.space, u.as_ptr(), v.as_ptr(), u.len(), &mut r),
                AsStatus::Ok
            );
        }
        r
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe {
            as_measure_free(self.measure);
            as_space_free(self.space);
        }
    }
}

unsafe fn estimate(f: *const AsFunctional, measure: *const AsMeasure, b: usize) -> *mut AsEstimate {
    let mut e = ptr::null_mut();
    assert_eq!(
        as_estimate_new(f, measure, b, 11, 1e-12, &mut e),
        AsStatus::Ok,
        "{}",
        last_error()
    );
    e
}

#[test]
fn linear_functional_has_one_exact_direction() {
    let fx = Fixture::new(17);
    let h1 = fx.field(|x, y| x + y);
    let h2 = fx.field(|x, _| x * x);
    let sum: Vec<f64> = h1.iter().zip(&h2).map(|(a, b)| a + b).collect();
    let norm2 = fx.ip(&sum, &sum);
    unsafe {
        let mut f = ptr::null_mut();
        assert_eq!(
            as_functional_new_linear(fx.space, h1.as_ptr(), h2.as_ptr(), h1.len(), &mut f),
            AsStatus::Ok
        );
        let e = estimate(f, fx.measure, 30);
        assert_eq!(as_estimate_rank(e), 1);
        let mut sigma = 0.0;
        assert_eq!(as_estimate_eigenvalues(e, &mut sigma, 1), AsStatus::Ok);
        assert!((sigma - norm2).abs() <= 1e-12 * norm2, "{sigma} vs {norm2}");
        let mut w = vec![0.0; fx.len()];
        assert_eq!(as_estimate_eigenfunction(e, 0, w.as_mut_ptr(), w.len()), AsStatus::Ok);
        let cos = fx.ip(&w, &sum).abs() / norm2.sqrt();
        assert!((cos - 1.0).abs() < 1e-12, "cos {cos}");
        as_estimate_free(e);
        as_functional_free(f);
    }
}

struct Linear {
    space: *const AsSpace,
    g: Vec<f64>,
    fail: bool,
}

unsafe extern "C" fn linear_cb(user: *mut c_void, u: *const f64, len: usize, value: *mut f64, grad: *mut f64) -> i32 {
    let data = &*(user as *const Linear);
    if data.fail {
        return 7;
    }
    if as_space_inner_product(data.space, u, data.g.as_ptr(), len, value) != AsStatus::Ok {
        return 1;
    }
    if !grad.is_null() {
        ptr::copy_nonoverlapping(data.g.as_ptr(), grad, len);
    }
    0
}

#[test]
fn callback_matches_builtin() {
    let fx = Fixture::new(17);
    let g = fx.field(|x, y| (3.0 * x).sin() * y);
    let zero = vec![0.0; fx.len()];
    let data = Linear {
        space: fx.space,
        g: g.clone(),
        fail: false,
    };
    unsafe {
        let mut cb = ptr::null_mut();
        let user = &data as *const Linear as *mut c_void;
        assert_eq!(
            as_functional_new_callback(fx.space, Some(linear_cb), user, &mut cb),
            AsStatus::Ok
        );
        let mut builtin = ptr::null_mut();
        assert_eq!(
            as_functional_new_linear(fx.space, g.as_ptr(), zero.as_ptr(), g.len(), &mut builtin),
            AsStatus::Ok
        );

        let u = fx.field(|x, y| x - y * y);
        let (mut a, mut b) = (0.0, 0.0);
        let mut ga = vec![0.0; fx.len()];
        assert_eq!(
            as_functional_evaluate(cb, u.as_ptr(), u.len(), &mut a, ga.as_mut_ptr()),
            AsStatus::Ok
        );
        assert_eq!(
            as_functional_evaluate(builtin, u.as_ptr(), u.len(), &mut b, ptr::null_mut()),
            AsStatus::Ok
        );
        assert_eq!(a, b);
        assert_eq!(ga, g);

        let e1 = estimate(cb, fx.measure, 40);
        let e2 = estimate(builtin, fx.measure, 40);
        let (mut s1, mut s2) = (0.0, 0.0);
        as_estimate_eigenvalues(e1, &mut s1, 1);
        as_estimate_eigenvalues(e2, &mut s2, 1);
        assert_eq!(s1, s2);
        as_estimate_free(e1);
        as_estimate_free(e2);
        as_functional_free(cb);
        as_functional_free(builtin);
    }
}

#[test]
fn failing_callback_reports_numerical() {
    let fx = Fixture::new(9);
    let data = Linear {
        space: fx.space,
        g: vec![0.0; fx.len()],
        fail: true,
    };
    unsafe {
        let mut cb = ptr::null_mut();
        let user = &data as *const Linear as *mut c_void;
        assert_eq!(
            as_functional_new_callback(fx.space, Some(linear_cb), user, &mut cb),
            AsStatus::Ok
        );
        let mut e = ptr::null_mut();
        assert_eq!(
            as_estimate_new(cb, fx.measure, 5, 1, 1e-12, &mut e),
            AsStatus::Numerical
        );
        assert!(e.is_null());
        assert!(last_error().contains("returned 7"), "{}", last_error());
        as_functional_free(cb);
        assert_eq!(
            as_functional_new_callback(fx.space, None, ptr::null_mut(), &mut cb),
            AsStatus::NullPointer
        );
    }
}

#[test]
fn argument_errors() {
    let fx = Fixture::new(17);
    unsafe {
        assert_eq!(as_space_new_unit_square(9, 9, ptr::null_mut()), AsStatus::NullPointer);
        let mut s = ptr::null_mut();
        assert_eq!(as_space_new_unit_square(1, 9, &mut s), AsStatus::InvalidArgument);
        assert!(s.is_null());
        assert_eq!(as_space_new_unit_square(9, 9, &mut s), AsStatus::Ok);
        let mut f = ptr::null_mut();
        assert_eq!(as_functional_new_poisson(s, 1e-4, &mut f), AsStatus::InvalidArgument);
        as_space_free(s);

        let mut m = ptr::null_mut();
        assert_eq!(
            as_measure_new_separable_sine(fx.space, 4, 1.0, 1.0, &mut m),
            AsStatus::InvalidArgument
        );
        assert!(last_error().contains("trace class"), "{}", last_error());

        let short = [0.0; 3];
        let mut v = 0.0;
        assert_eq!(as_functional_new_poisson(fx.space, 1e-4, &mut f), AsStatus::Ok);
        assert_eq!(
            as_functional_evaluate(f, short.as_ptr(), 3, &mut v, ptr::null_mut()),
            AsStatus::InvalidArgument
        );
        as_functional_free(f);

        let modes = [99usize];
        let coeffs = [1.0];
        assert_eq!(
            as_functional_new_quadratic(fx.measure, modes.as_ptr(), coeffs.as_ptr(), 1, &mut f),
            AsStatus::InvalidArgument
        );

        // Functional and measure on different grids.
        let other = Fixture::new(11);
        let modes = [0usize];
        assert_eq!(
            as_functional_new_quadratic(other.measure, modes.as_ptr(), coeffs.as_ptr(), 1, &mut f),
            AsStatus::Ok
        );
        let mut e = ptr::null_mut();
        assert_eq!(
            as_estimate_new(f, fx.measure, 5, 1, 1e-12, &mut e),
            AsStatus::SpaceMismatch
        );
        as_functional_free(f);

        assert_eq!(as_space_len(ptr::null()), 0);
        assert_eq!(as_estimate_rank(ptr::null()), 0);
        as_space_free(ptr::null_mut());
        as_estimate_free(ptr::null_mut());
    }
}

#[test]
fn estimate_writes_json() {
    let fx = Fixture::new(9);
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("est.json").to_str().unwrap()).unwrap();
    unsafe {
        let modes = [0usize, 2];
        let coeffs = [2.0, 1.0];
        let mut f = ptr::null_mut();
        assert_eq!(
            as_functional_new_quadratic(fx.measure, modes.as_ptr(), coeffs.as_ptr(), 2, &mut f),
            AsStatus::Ok
        );
        let e = estimate(f, fx.measure, 20);
        let mut buf = [0.0; 1];
        assert_eq!(
            as_estimate_eigenvalues(e, buf.as_mut_ptr(), 1),
            AsStatus::InvalidArgument
        );
        assert_eq!(as_estimate_write(e, path.as_ptr(), ptr::null()), AsStatus::Ok);
        let text = std::fs::read_to_string(dir.path().join("est.json")).unwrap();
        assert!(text.trim_start().starts_with('{'));

        let bad = CString::new(dir.path().join("missing/est.json").to_str().unwrap()).unwrap();
        assert_eq!(as_estimate_write(e, bad.as_ptr(), ptr::null()), AsStatus::Io);
        as_estimate_free(e);
        as_functional_free(f);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(as_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/active_subspace.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .filter_map(|rest| rest.split('(').next())
        .filter(|name| name.starts_with("as_"))
        .collect();
    assert!(exports.len() > 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

/// Compiles `tests/c/smoke.c` against the header and the shared library.
#[test]
fn c_program_links_and_runs() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<test binary>
    let libdir = std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf();
    assert!(libdir.join("libactive_subspace_ffi.so").exists() || libdir.join("libactive_subspace_ffi.dylib").exists());
    let exe = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("ffi_smoke");
    let out = Command::new(cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&libdir)
        .args(["-lactive_subspace_ffi", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe)
        .env("LD_LIBRARY_PATH", &libdir)
        .env("DYLD_LIBRARY_PATH", &libdir)
        .output()
        .unwrap();
    assert!(
        run.status.success(),
        "{}{}",
        String::from_utf8_lossy(&run.stdout),
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).contains("rank 2"));
}
