use std::ffi::{c_char, CString};
use std::ptr;

use quadlearn_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    let n = unsafe { ql_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn rls_recovers_a_linear_map() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { ql_rls_new(2, 1e6, 1.0, &mut h) }, QlStatus::Ok);
    let truth = [1.5, -0.25];
    for k in 0..50 {
        let x = [1.0, (k as f64 * 0.37).sin()];
        let y = truth[0] * x[0] + truth[1] * x[1];
        let mut e = f64::NAN;
        assert_eq!(unsafe { ql_rls_update(h, x.as_ptr(), 2, y, &mut e) }, QlStatus::Ok);
        assert!(e.is_finite());
    }
    let mut theta = [0.0; 2];
    assert_eq!(unsafe { ql_rls_theta(h, theta.as_mut_ptr(), 2) }, QlStatus::Ok);
    for i in 0..2 {
        assert!((theta[i] - truth[i]).abs() < 1e-5, "{theta:?}");
    }
    unsafe { ql_rls_free(h) };
}

#[test]
fn rls_reports_bad_input() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { ql_rls_new(0, 100.0, 1.0, &mut h) }, QlStatus::InvalidArgument);
    assert!(h.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { ql_rls_new(2, 100.0, 1.0, &mut h) }, QlStatus::Ok);
    let x = [f64::NAN, 1.0];
    assert_eq!(
        unsafe { ql_rls_update(h, x.as_ptr(), 2, 0.0, ptr::null_mut()) },
        QlStatus::Numerical
    );
    let short = [1.0];
    assert_eq!(
        unsafe { ql_rls_update(h, short.as_ptr(), 1, 0.0, ptr::null_mut()) },
        QlStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { ql_rls_update(h, ptr::null(), 2, 0.0, ptr::null_mut()) },
        QlStatus::NullPointer
    );
    let mut theta = [0.0; 3];
    assert_eq!(
        unsafe { ql_rls_theta(h, theta.as_mut_ptr(), 3) },
        QlStatus::InvalidArgument
    );
    assert!(last_error().contains('3'));
    unsafe { ql_rls_free(h) };
    unsafe { ql_rls_free(ptr::null_mut()) };
}

#[test]
fn error_message_is_truncated_and_terminated() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { ql_rls_new(0, 100.0, 1.0, &mut h) }, QlStatus::InvalidArgument);
    let mut buf = [1 as c_char; 4];
    let n = unsafe { ql_last_error_message(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 3);
    assert_eq!(buf[3], 0);
    assert_eq!(unsafe { ql_last_error_message(ptr::null_mut(), 0) }, n);
}

#[test]
fn sim_falls_with_motors_off() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { ql_sim_new(3, &mut h) }, QlStatus::Ok);
    let w = [0.0; 3];
    assert_eq!(unsafe { ql_sim_throw(h, 2.0, w.as_ptr(), 1) }, QlStatus::Ok);
    let mut s0 = QlBodyState::default();
    assert_eq!(unsafe { ql_sim_state(h, &mut s0) }, QlStatus::Ok);
    let esc = [0.0; 4];
    for _ in 0..2000 {
        assert_eq!(unsafe { ql_sim_step(h, esc.as_ptr(), 5e-4) }, QlStatus::Ok);
    }
    let mut s1 = QlBodyState::default();
    assert_eq!(unsafe { ql_sim_state(h, &mut s1) }, QlStatus::Ok);
    // one second of flight at idle: velocity grows downward, attitude stays unit
    assert!(s1.velocity[2] > s0.velocity[2] + 5.0);
    let qn: f64 = s1.attitude.iter().map(|c| c * c).sum();
    assert!((qn - 1.0).abs() < 1e-9);
    assert_eq!(unsafe { ql_sim_step(h, esc.as_ptr(), -1.0) }, QlStatus::InvalidArgument);
    unsafe { ql_sim_free(h) };
}

#[test]
fn gains_match_the_core() {
    let z = [0.7, 0.7, 0.7, 0.7];
    let mut g = QlGains::default();
    assert_eq!(unsafe { ql_tune_gains(0.03, z.as_ptr(), &mut g) }, QlStatus::Ok);
    let core = quadlearn::outer::tune_gains(0.03, z).unwrap();
    assert_eq!(g.d, <[f64; 3]>::from(core.d));
    assert_eq!(g.p, <[f64; 3]>::from(core.p));
    assert_eq!(
        unsafe { ql_tune_gains(-1.0, z.as_ptr(), &mut g) },
        QlStatus::InvalidArgument
    );
    assert_eq!(ql_esc_invert(0.25, 0.5), quadlearn::indi::esc_invert(0.25, 0.5));
}

#[test]
fn episode_runs_from_toml() {
    let cfg = CString::new("throw_height = 3.5\n").unwrap();
    let mut out = std::mem::MaybeUninit::<QlEpisodeSummary>::uninit();
    assert_eq!(
        unsafe { ql_run_episode(cfg.as_ptr(), 0, out.as_mut_ptr()) },
        QlStatus::Ok
    );
    let out = unsafe { out.assume_init() };
    let core = quadlearn::harness::run_episode(
        &quadlearn::harness::EpisodeConfig::from_toml("throw_height = 3.5\n").unwrap(),
        0,
        None,
    )
    .unwrap();
    assert_eq!(out.success, core.success);
    assert_eq!(out.min_altitude, core.min_altitude);
    assert_eq!(out.truth, core.truth.to_array());
    assert_eq!(out.has_fit, core.fitted.is_some());
}

#[test]
fn episode_rejects_bad_config() {
    let cfg = CString::new("no_such_key = 1\n").unwrap();
    let mut out = std::mem::MaybeUninit::<QlEpisodeSummary>::uninit();
    assert_eq!(
        unsafe { ql_run_episode(cfg.as_ptr(), 0, out.as_mut_ptr()) },
        QlStatus::Config
    );
    assert!(last_error().contains("no_such_key"), "{}", last_error());
    assert_eq!(
        unsafe { ql_run_episode(ptr::null(), 0, ptr::null_mut()) },
        QlStatus::NullPointer
    );
}

#[test]
fn header_compiles_as_c() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/quadlearn.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(
        &src,
        format!("#include \"{header}\"\nint main(void) {{ return QL_STATUS_OK; }}\n"),
    )
    .unwrap();
    match std::process::Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .status()
    {
        Ok(s) => assert!(s.success()),
        Err(_) => eprintln!("no C compiler found, header check skipped"),
    }
}
