//! C interface to the quadlearn stack.
//!
//! Every fallible call returns a [`QlStatus`]; on failure the message is
//! kept per thread and can be copied out with [`ql_last_error_message`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use quadlearn::harness::{run_episode, EpisodeConfig};
use quadlearn::ident::PARAM_COUNT;
use quadlearn::indi::esc_invert;
use quadlearn::outer::tune_gains;
use quadlearn::rls::RlsState;
use quadlearn::sim::{randomize_vehicle, step_dynamics, ParamRanges, RigidBodyState, VehicleParams};

/// Number of entries in a parameter vector.
pub const QL_PARAM_COUNT: usize = 52;
const _: () = assert!(QL_PARAM_COUNT == PARAM_COUNT);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Config = 4,
    Io = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: QlStatus, msg: impl Into<String>) -> QlStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn guarded(f: impl FnOnce() -> QlStatus) -> QlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(QlStatus::Panic, "internal panic"),
    }
}

/// Copy the last error message of this thread into `buf` as a
/// NUL-terminated string, truncated to `len - 1` bytes. Returns the full
/// message length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ql_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// ESC input that yields normalized thrust `u` for shape parameter `kappa`.
#[no_mangle]
pub extern "C" fn ql_esc_invert(u: f64, kappa: f64) -> f64 {
    esc_invert(u, kappa)
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct QlGains {
    pub d: [f64; 3],
    pub a: [f64; 3],
    pub v: [f64; 3],
    pub p: [f64; 3],
}

/// Cascade gains for actuator time constant `tau` (s) and damping ratios
/// `zetas` = (rate, attitude, velocity, position).
///
/// # Safety
/// `zetas` must point to 4 doubles and `out` to a writable `QlGains`.
#[no_mangle]
pub unsafe extern "C" fn ql_tune_gains(tau: f64, zetas: *const f64, out: *mut QlGains) -> QlStatus {
    if zetas.is_null() || out.is_null() {
        return fail(QlStatus::NullPointer, "null argument");
    }
    let z = [*zetas, *zetas.add(1), *zetas.add(2), *zetas.add(3)];
    guarded(|| match tune_gains(tau, z) {
        Ok(g) => {
            *out = QlGains {
                d: g.d.into(),
                a: g.a.into(),
                v: g.v.into(),
                p: g.p.into(),
            };
            QlStatus::Ok
        }
        Err(e) => fail(QlStatus::InvalidArgument, e.to_string()),
    })
}

/// Recursive least-squares filter handle.
pub struct QlRls {
    inner: RlsState<f64>,
}

/// Create an `n`-parameter filter with initial covariance `p0` and
/// forgetting factor `lambda` in (0, 1].
///
/// # Safety
/// `out` must point to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn ql_rls_new(n: usize, p0: f64, lambda: f64, out: *mut *mut QlRls) -> QlStatus {
    if out.is_null() {
        return fail(QlStatus::NullPointer, "null output handle");
    }
    guarded(|| match RlsState::new(n, p0).and_then(|r| r.with_forgetting(lambda)) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(QlRls { inner }));
            QlStatus::Ok
        }
        Err(e) => fail(QlStatus::InvalidArgument, e.to_string()),
    })
}

/// One update with regressor `x` (length `n`) and measurement `y`. The
/// a-priori innovation is written to `innovation` when it is not null.
///
/// # Safety
/// `h` must come from [`ql_rls_new`]; `x` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ql_rls_update(
    h: *mut QlRls,
    x: *const f64,
    n: usize,
    y: f64,
    innovation: *mut f64,
) -> QlStatus {
    let (Some(h), false) = (h.as_mut(), x.is_null()) else {
        return fail(QlStatus::NullPointer, "null argument");
    };
    let x = std::slice::from_raw_parts(x, n);
    guarded(|| match h.inner.update(x, y) {
        Ok(e) => {
            if !innovation.is_null() {
                *innovation = e;
            }
            QlStatus::Ok
        }
        Err(quadlearn::RlsError::NonFinite) => fail(QlStatus::Numerical, "non-finite input"),
        Err(e) => fail(QlStatus::InvalidArgument, e.to_string()),
    })
}

/// Copy the current estimate into `out` (length `n`, the filter size).
///
/// # Safety
/// `h` must come from [`ql_rls_new`]; `out` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ql_rls_theta(h: *const QlRls, out: *mut f64, n: usize) -> QlStatus {
    let (Some(h), false) = (h.as_ref(), out.is_null()) else {
        return fail(QlStatus::NullPointer, "null argument");
    };
    let theta = h.inner.theta();
    if n != theta.len() {
        return fail(
            QlStatus::InvalidArgument,
            format!("buffer holds {n} values, filter has {}", theta.len()),
        );
    }
    ptr::copy_nonoverlapping(theta.as_ptr(), out, n);
    QlStatus::Ok
}

/// # Safety
/// `h` must be null or come from [`ql_rls_new`], and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ql_rls_free(h: *mut QlRls) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Simulated vehicle handle.
pub struct QlSim {
    vehicle: VehicleParams,
    state: RigidBodyState,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct QlBodyState {
    /// Inertial, z down, m.
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    /// w, x, y, z
    pub attitude: [f64; 4],
    /// Body rates, rad/s.
    pub omega: [f64; 3],
    pub rotor_speeds: [f64; 4],
}

/// Draw a random vehicle from the default ranges and place it at rest,
/// level, rotors at idle.
///
/// # Safety
/// `out` must point to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn ql_sim_new(seed: u64, out: *mut *mut QlSim) -> QlStatus {
    if out.is_null() {
        return fail(QlStatus::NullPointer, "null output handle");
    }
    guarded(|| match randomize_vehicle(seed, &ParamRanges::default()) {
        Ok(vehicle) => {
            let state = RigidBodyState::at_rest(vehicle.omega_idle);
            *out = Box::into_raw(Box::new(QlSim { vehicle, state }));
            QlStatus::Ok
        }
        Err(e) => fail(QlStatus::InvalidArgument, e.to_string()),
    })
}

/// Replace the state with a vertical throw to `height` (m) with initial
/// body rate `omega0` (3 doubles, rad/s). The attitude is drawn from
/// `seed`.
///
/// # Safety
/// `h` must come from [`ql_sim_new`]; `omega0` must point to 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn ql_sim_throw(h: *mut QlSim, height: f64, omega0: *const f64, seed: u64) -> QlStatus {
    let (Some(h), false) = (h.as_mut(), omega0.is_null()) else {
        return fail(QlStatus::NullPointer, "null argument");
    };
    let w = Vector3::new(*omega0, *omega0.add(1), *omega0.add(2));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    guarded(
        || match quadlearn::sim::spawn_throw(height, w, h.vehicle.omega_idle, &mut rng) {
            Ok(s) => {
                h.state = s;
                QlStatus::Ok
            }
            Err(e) => fail(QlStatus::InvalidArgument, e.to_string()),
        },
    )
}

/// Advance by `dt` seconds holding the four ESC inputs `esc` constant.
///
/// # Safety
/// `h` must come from [`ql_sim_new`]; `esc` must point to 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn ql_sim_step(h: *mut QlSim, esc: *const f64, dt: f64) -> QlStatus {
    let (Some(h), false) = (h.as_mut(), esc.is_null()) else {
        return fail(QlStatus::NullPointer, "null argument");
    };
    let cmds = [*esc, *esc.add(1), *esc.add(2), *esc.add(3)];
    guarded(|| match step_dynamics(&h.state, &cmds, &h.vehicle, dt) {
        Ok(s) => {
            h.state = s;
            QlStatus::Ok
        }
        Err(quadlearn::SimError::NonFinite) => fail(QlStatus::Numerical, "non-finite state or input"),
        Err(e) => fail(QlStatus::InvalidArgument, e.to_string()),
    })
}

/// # Safety
/// `h` must come from [`ql_sim_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ql_sim_state(h: *const QlSim, out: *mut QlBodyState) -> QlStatus {
    let (Some(h), false) = (h.as_ref(), out.is_null()) else {
        return fail(QlStatus::NullPointer, "null argument");
    };
    let s = &h.state;
    let q = s.attitude.quaternion();
    *out = QlBodyState {
        position: s.position.into(),
        velocity: s.velocity.into(),
        attitude: [q.w, q.i, q.j, q.k],
        omega: s.omega_body.into(),
        rotor_speeds: s.rotor_speeds,
    };
    QlStatus::Ok
}

/// # Safety
/// `h` must be null or come from [`ql_sim_new`], and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ql_sim_free(h: *mut QlSim) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Outcome of one simulated throw. Times that were never reached are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct QlEpisodeSummary {
    pub success: bool,
    pub gyro_saturated: bool,
    /// True when the identifier produced a parameter set.
    pub has_fit: bool,
    /// Bit i set when motor i+1's excitation was aborted.
    pub aborted_motors: u8,
    pub degraded_ticks: u64,
    pub switchover_time: f64,
    pub recovery_time: f64,
    pub rate_tracking_time: f64,
    pub max_tilt_after_2s: f64,
    pub min_altitude: f64,
    pub final_position_error: f64,
    /// Fitted parameters, NaN without a fit. Layout: 13 rows of 4 motors.
    pub fitted: [f64; QL_PARAM_COUNT],
    pub truth: [f64; QL_PARAM_COUNT],
}

/// Run one episode. `config_toml` may be null for the defaults; otherwise
/// it is a NUL-terminated TOML document in the same format as the CLI's
/// `--config` file. No tick log is written.
///
/// # Safety
/// `config_toml` must be null or a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ql_run_episode(config_toml: *const c_char, seed: u64, out: *mut QlEpisodeSummary) -> QlStatus {
    if out.is_null() {
        return fail(QlStatus::NullPointer, "null output");
    }
    let cfg = if config_toml.is_null() {
        EpisodeConfig::default()
    } else {
        let text = match CStr::from_ptr(config_toml).to_str() {
            Ok(t) => t,
            Err(_) => return fail(QlStatus::Config, "configuration is not UTF-8"),
        };
        match EpisodeConfig::from_toml(text) {
            Ok(c) => c,
            Err(e) => return fail(QlStatus::Config, e.to_string()),
        }
    };
    let cfg = EpisodeConfig { tick_log: false, ..cfg };
    guarded(|| {
        let r = match run_episode(&cfg, seed, None) {
            Ok(r) => r,
            Err(quadlearn::HarnessError::Config(m)) => return fail(QlStatus::Config, m),
            Err(e) => return fail(QlStatus::Io, e.to_string()),
        };
        let nan = |v: Option<f64>| v.unwrap_or(f64::NAN);
        *out = QlEpisodeSummary {
            success: r.success,
            gyro_saturated: r.gyro_saturated,
            has_fit: r.fitted.is_some(),
            aborted_motors: r
                .aborted_motors
                .iter()
                .enumerate()
                .fold(0, |m, (i, a)| m | ((*a as u8) << i)),
            degraded_ticks: r.degraded_ticks as u64,
            switchover_time: nan(r.switchover_time),
            recovery_time: nan(r.recovery_time),
            rate_tracking_time: nan(r.rate_tracking_time),
            max_tilt_after_2s: nan(r.max_tilt_after_2s),
            min_altitude: r.min_altitude,
            final_position_error: nan(r.final_position_error),
            fitted: r.fitted.map(|f| f.to_array()).unwrap_or([f64::NAN; QL_PARAM_COUNT]),
            truth: r.truth.to_array(),
        };
        QlStatus::Ok
    })
}
