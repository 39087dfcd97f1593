use std::ffi::CStr;
use std::ptr;

use robust_oed_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    unsafe { oed_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_string_lossy()
        .into_owned()
}

const T: [f64; 12] = [1.0, 0.2, 0.1, 0.9, -0.3, 0.4, 0.5, 0.5, 0.8, -0.6, 0.2, 1.1];

unsafe fn frf_6x2() -> *mut OedFrf {
    let mut frf = ptr::null_mut();
    assert_eq!(oed_frf_new(T.as_ptr(), 6, 2, &mut frf), OedStatus::Ok);
    frf
}

#[test]
fn classical_value_and_gradient() {
    unsafe {
        let frf = frf_6x2();
        assert_eq!(oed_frf_n_sensors(frf), 6);
        assert_eq!(oed_frf_n_params(frf), 2);
        let mut crit = ptr::null_mut();
        assert_eq!(oed_criterion_classical(1.0, &mut crit), OedStatus::Ok);
        let mut d = ptr::null_mut();
        let w = [1.0; 6];
        assert_eq!(
            oed_design_new(w.as_ptr(), ptr::null(), 6, 6.0, &mut d),
            OedStatus::Ok
        );

        let mut v = 0.0;
        assert_eq!(oed_evaluate(frf, crit, d, &mut v), OedStatus::Ok);
        // -logdet(T^T T)
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for r in T.chunks(2) {
            a += r[0] * r[0];
            b += r[0] * r[1];
            c += r[1] * r[1];
        }
        assert!((v + (a * c - b * b).ln()).abs() < 1e-12);

        let mut g = [0.0; 6];
        assert_eq!(oed_gradient(frf, crit, d, g.as_mut_ptr(), 6), OedStatus::Ok);
        assert!(g.iter().all(|x| *x < 0.0));
        assert_eq!(
            oed_gradient(frf, crit, d, g.as_mut_ptr(), 5),
            OedStatus::InvalidArgument
        );

        oed_design_free(d);
        oed_criterion_free(crit);
        oed_frf_free(frf);
    }
}

#[test]
fn projection_respects_budget() {
    let v = [2.0, 2.0];
    let mut out = [0.0; 2];
    let s = unsafe { oed_project(v.as_ptr(), ptr::null(), 2, 1.0, out.as_mut_ptr()) };
    assert_eq!(s, OedStatus::Ok);
    assert!((out[0] - 0.5).abs() < 1e-9 && (out[1] - 0.5).abs() < 1e-9);
    let s = unsafe { oed_project(v.as_ptr(), ptr::null(), 2, 0.0, out.as_mut_ptr()) };
    assert_eq!(s, OedStatus::InvalidConfig);
    assert!(last_error().contains("budget"));
}

#[test]
fn sweep_returns_binary_design() {
    unsafe {
        let frf = frf_6x2();
        let mut crit = ptr::null_mut();
        assert_eq!(oed_criterion_one_out(6, 1.0, &mut crit), OedStatus::Ok);
        let w = [0.5; 6];
        let mut d0 = ptr::null_mut();
        assert_eq!(
            oed_design_new(w.as_ptr(), ptr::null(), 6, 3.0, &mut d0),
            OedStatus::Ok
        );

        let mut relaxed = ptr::null_mut();
        assert_eq!(
            oed_solve_relaxed(frf, crit, d0, 0.0, 0, &mut relaxed),
            OedStatus::Ok
        );
        let mut best = [0.0; 6];
        assert_eq!(
            oed_design_weights(relaxed, best.as_mut_ptr(), 6),
            OedStatus::Ok
        );
        assert!(best.iter().sum::<f64>() <= 3.0 + 1e-9);

        let mut bin = ptr::null_mut();
        let mut fallback = true;
        assert_eq!(
            oed_gamma_sweep(frf, crit, d0, 0.1, 1e3, 20, &mut bin, &mut fallback),
            OedStatus::Ok
        );
        let mut wb = [0.0; 6];
        oed_design_weights(bin, wb.as_mut_ptr(), 6);
        assert!(wb.iter().all(|x| *x == 0.0 || *x == 1.0));
        assert_eq!(oed_design_len(bin), 6);

        for d in [d0, relaxed, bin] {
            oed_design_free(d);
        }
        oed_criterion_free(crit);
        oed_frf_free(frf);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut frf = ptr::null_mut();
        assert_eq!(
            oed_frf_new(ptr::null(), 3, 2, &mut frf),
            OedStatus::InvalidArgument
        );
        assert!(frf.is_null());
        assert!(last_error().contains("null"));

        // rank-one FRF: every design is ill-posed
        let t = [1.0, 2.0, 2.0, 4.0, 3.0, 6.0];
        assert_eq!(oed_frf_new(t.as_ptr(), 3, 2, &mut frf), OedStatus::IllPosed);

        let mut crit = ptr::null_mut();
        assert_eq!(
            oed_criterion_classical(-1.0, &mut crit),
            OedStatus::InvalidConfig
        );
        let mut v = 0.0;
        assert_eq!(
            oed_evaluate(ptr::null(), ptr::null(), ptr::null(), &mut v),
            OedStatus::InvalidArgument
        );
        oed_frf_free(ptr::null_mut());
    }
}

#[test]
fn demo_model_is_available() {
    unsafe {
        let mut frf = ptr::null_mut();
        assert_eq!(oed_frf_demo(&mut frf), OedStatus::Ok);
        assert_eq!(oed_frf_n_sensors(frf), 267);
        assert_eq!(oed_frf_n_params(frf), 6);
        oed_frf_free(frf);
    }
}
