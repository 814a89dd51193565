use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{UnitQuaternion, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::config::EpisodeConfig;
use super::log::TickLog;
use super::release::ReleaseDetector;
use crate::error::HarnessError;
use crate::estimation::{FixSource, Navigator};
use crate::excitation::ExcitationState;
use crate::ident::{ControlParams, Identifier, PARAM_COUNT};
use crate::indi::{ControlFilters, InnerLoop, PseudoControl};
use crate::outer::{attitude_rates, heading_of, pid_accel, rate_to_nu, tune_gains, AttitudeReference, Gains};
use crate::sim::{
    gravity_vector, random_attitude, randomize_vehicle, sample_sensors, spawn_throw, step_dynamics, RigidBodyState,
    SensorConfig, SensorSample, VehicleParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EpisodePhase {
    Held,
    Ballistic,
    Delay,
    Excitation,
    Recovery,
    Position,
}

impl EpisodePhase {
    pub fn as_str(&self) -> &'static str {
        match self {
            EpisodePhase::Held => "held",
            EpisodePhase::Ballistic => "ballistic",
            EpisodePhase::Delay => "delay",
            EpisodePhase::Excitation => "excitation",
            EpisodePhase::Recovery => "recovery",
            EpisodePhase::Position => "position",
        }
    }
}

/// Outcome of one simulated throw.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeReport {
    pub seed: u64,
    pub vehicle: VehicleParams,
    pub truth: ControlParams,
    /// Identifier output at switchover, before the validity gates.
    pub fitted: Option<ControlParams>,
    /// Why the gated parameter set was rejected.
    pub fit_error: Option<String>,
    pub gains: Option<Gains>,
    pub omega0: [f64; 3],
    /// Detection time minus true release time, s.
    pub release_latency: Option<f64>,
    /// Time of switchover from release, s.
    pub switchover_time: Option<f64>,
    /// From switchover to the first tick meeting the attitude/rate
    /// thresholds, s.
    pub recovery_time: Option<f64>,
    /// From switchover until the rate error drops below 10% of its
    /// switchover value, s.
    pub rate_tracking_time: Option<f64>,
    pub rate_error_at_switch: Option<f64>,
    /// deg, from 2 s after switchover to the end.
    pub max_tilt_after_2s: Option<f64>,
    pub min_altitude: f64,
    pub final_position_error: Option<f64>,
    pub gyro_saturated: bool,
    pub max_rate_excitation: f64,
    pub aborted_motors: [bool; 4],
    pub degraded_ticks: usize,
    pub success: bool,
    /// Mean compute time of one tick during excitation, µs.
    #[serde(skip)]
    pub mean_tick_us: f64,
    /// Wall time of the whole excitation window, s.
    #[serde(skip)]
    pub excitation_wall_s: f64,
    pub log_path: Option<PathBuf>,
}

impl EpisodeReport {
    /// Fitted minus true, in [`ControlParams::to_array`] order.
    pub fn param_errors(&self) -> Option<[f64; PARAM_COUNT]> {
        let fit = self.fitted?.to_array();
        let truth = self.truth.to_array();
        Some(std::array::from_fn(|i| fit[i] - truth[i]))
    }
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).map(|n| n.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    }
}

/// Sensors while the hand carries the weight: at rest, rotors at idle.
fn held_sample(state: &RigidBodyState, sensors: &SensorConfig, time: f64, rng: &mut ChaCha8Rng) -> SensorSample {
    let n = sensors.noise;
    let f = state.attitude.inverse() * (-gravity_vector());
    let lim = sensors.gyro_limit;
    SensorSample {
        gyro: Vector3::from_fn(|_, _| gauss(rng, n.gyro).clamp(-lim, lim)),
        specific_force: f + Vector3::from_fn(|_, _| gauss(rng, n.accel)),
        rotor_speeds: std::array::from_fn(|i| state.rotor_speeds[i] + gauss(rng, n.rotor_speed)),
        rotor_accels: [0.0; 4],
        timestamp: time,
    }
}

fn noise_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x0005_EED0)
}

/// Initial body rate: uniform direction, magnitude uniform in `[0, max]`.
fn draw_omega0(rng: &mut ChaCha8Rng, max: f64) -> Vector3<f64> {
    let dir = random_attitude(rng) * Vector3::x();
    dir * (rng.random::<f64>() * max)
}

struct Control {
    inner: InnerLoop,
    gains: Gains,
    reference: AttitudeReference,
    psi: f64,
    omega_r_prev: Option<Vector3<f64>>,
}

/// Run one throw. With `log_dir`, a per-tick CSV named after the seed is
/// written there.
pub fn run_episode(cfg: &EpisodeConfig, seed: u64, log_dir: Option<&Path>) -> Result<EpisodeReport, HarnessError> {
    cfg.validate()?;
    let dt = cfg.dt();
    let fs = cfg.sample_rate;
    let vehicle = randomize_vehicle(seed, &cfg.ranges)?;
    let truth = ControlParams::from_vehicle(&vehicle);
    let mut rng = noise_rng(seed);
    let omega0 = draw_omega0(&mut rng, cfg.omega0_max);
    let mut throw = spawn_throw(cfg.throw_height, omega0, vehicle.omega_idle, &mut rng)?;
    throw.position.z = -cfg.release_altitude;
    let mut state = RigidBodyState {
        velocity: Vector3::zeros(),
        omega_body: Vector3::zeros(),
        ..throw.clone()
    };
    let mut prev_state = state.clone();

    let mut log = match (log_dir, cfg.tick_log) {
        (Some(dir), true) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("episode_{seed}.csv"));
            Some((TickLog::new(BufWriter::new(File::create(&path)?))?, path))
        }
        _ => None,
    };

    let release_tick = (cfg.held_duration / dt).round() as usize;
    let release_time = release_tick as f64 * dt;
    let mut detector = ReleaseDetector::new(&cfg.release, dt);
    let mut fixes = FixSource::new(cfg.fixes);
    let mut nav: Option<Navigator> = None;
    let mut filters = ControlFilters::new(cfg.control_cutoff, fs, vehicle.imu_offset);
    let mut ident = Identifier::new(cfg.ident_cutoff, fs, &cfg.ident_scales, vehicle.imu_offset);
    let mut excitation: Option<ExcitationState> = None;
    let mut control: Option<Control> = None;
    let mut phase = EpisodePhase::Held;
    let mut excite_at = f64::INFINITY;
    let mut last_cmd = [0.0; 4];

    let mut report = EpisodeReport {
        seed,
        vehicle: vehicle.clone(),
        truth,
        fitted: None,
        fit_error: None,
        gains: None,
        omega0: omega0.into(),
        release_latency: None,
        switchover_time: None,
        recovery_time: None,
        rate_tracking_time: None,
        rate_error_at_switch: None,
        max_tilt_after_2s: None,
        min_altitude: state.altitude(),
        final_position_error: None,
        gyro_saturated: false,
        max_rate_excitation: 0.0,
        aborted_motors: [false; 4],
        degraded_ticks: 0,
        success: false,
        mean_tick_us: 0.0,
        excitation_wall_s: 0.0,
        log_path: log.as_ref().map(|(_, p)| p.clone()),
    };
    let mut t_switch = f64::INFINITY;
    let mut crashed = false;
    let mut excitation_ticks = 0usize;
    let mut excitation_compute = 0.0f64;
    let setpoint = Vector3::from(cfg.setpoint);
    let gyro_limit = cfg.sensors.gyro_limit;
    // detection must happen well before this, or the episode is abandoned
    let max_ticks = release_tick + ((2.0 + cfg.delay_after_release + cfg.excitation.total_duration()) / dt) as usize;

    let mut k = 0usize;
    loop {
        let t = k as f64 * dt;
        if k == release_tick {
            prev_state = state.clone();
            state = throw.clone();
            phase = EpisodePhase::Ballistic;
        }
        let sample = if phase == EpisodePhase::Held {
            held_sample(&state, &cfg.sensors, t, &mut rng)
        } else {
            sample_sensors(&state, &prev_state, &vehicle, &cfg.sensors, dt, t, &mut rng)
        };
        let fix = fixes.poll(&state, t, &mut rng).copied();

        let phase_at_start = phase;
        let tick_start = Instant::now();
        let nav_state = match nav.as_mut() {
            None => {
                let fix0 = fix.expect("fix available on the first tick");
                nav.insert(Navigator::from_rest(&sample.specific_force, &fix0, cfg.observer))
                    .nav
            }
            Some(n) => *n.step(&sample.gyro, &sample.specific_force, fix.as_ref(), t, dt),
        };
        let attitude = if cfg.oracle_attitude {
            state.attitude
        } else {
            nav_state.attitude
        };
        let meas = filters.step(&sample);
        // a rejected (non-finite) sample leaves the estimates unchanged
        let _ = ident.ident_step(&sample, &last_cmd, phase == EpisodePhase::Excitation);

        if let Some(t_fire) = detector.step(&sample.specific_force, t) {
            report.release_latency = Some(t_fire - release_time);
            excite_at = detector.estimated_release().unwrap_or(t_fire) + cfg.delay_after_release;
            if phase == EpisodePhase::Ballistic {
                phase = EpisodePhase::Delay;
            }
        }
        if phase == EpisodePhase::Delay && t + 1e-9 >= excite_at {
            phase = EpisodePhase::Excitation;
            excitation = Some(ExcitationState::new(cfg.excitation, dt, gyro_limit, &sample.gyro));
        } else if phase == EpisodePhase::Excitation {
            let exc = excitation.as_mut().expect("excitation state");
            exc.advance(&sample.gyro);
            if exc.is_done() {
                report.aborted_motors = exc.aborted;
                report.fitted = Some(ident.snapshot());
                report.switchover_time = Some(t - release_time);
                match switchover(cfg, &ident, &meas, &attitude) {
                    Ok(c) => {
                        report.gains = Some(c.gains);
                        control = Some(c);
                        phase = EpisodePhase::Recovery;
                        t_switch = t;
                    }
                    Err(e) => {
                        report.fit_error = Some(e);
                        break;
                    }
                }
            }
        }

        let mut u = [0.0; 4];
        let mut nu_ref = PseudoControl::default();
        let mut omega_r = Vector3::zeros();
        let cmd = match phase {
            EpisodePhase::Excitation => excitation.as_ref().map(|e| e.excitation_command()).unwrap_or([0.0; 4]),
            EpisodePhase::Recovery | EpisodePhase::Position => {
                let c = control.as_mut().expect("controller after switchover");
                let a_r = if phase == EpisodePhase::Recovery {
                    // arrest the motion first
                    let a = -nav_state.velocity.component_mul(&c.gains.v);
                    let n = a.norm();
                    if n > cfg.limits.accel {
                        a * (cfg.limits.accel / n)
                    } else {
                        a
                    }
                } else {
                    pid_accel(
                        &(setpoint - nav_state.position),
                        &nav_state.velocity,
                        &c.gains,
                        &cfg.limits,
                    )
                };
                c.reference.update(&a_r, c.psi);
                omega_r = attitude_rates(&attitude, &c.reference.attitude, &c.gains.a);
                let mut rate_dot = rate_to_nu(&omega_r, &sample.gyro, &c.gains.d);
                if cfg.rate_feedforward {
                    if let Some(prev) = c.omega_r_prev {
                        rate_dot += (omega_r - prev) / dt;
                    }
                    c.omega_r_prev = Some(omega_r);
                }
                // no thrust while the thrust axis points away from the demand
                let align = (attitude * Vector3::z())
                    .dot(&(c.reference.attitude * Vector3::z()))
                    .max(0.0);
                nu_ref = PseudoControl {
                    fz: c.reference.fz * align,
                    rate_dot,
                };
                let out = c.inner.step(&meas, &nu_ref);
                if out.degraded {
                    report.degraded_ticks += 1;
                }
                u = out.u;
                if phase == EpisodePhase::Recovery
                    && attitude.angle_to(&c.reference.attitude) < cfg.position_handover.to_radians()
                {
                    phase = EpisodePhase::Position;
                }
                out.esc
            }
            _ => [0.0; 4],
        };
        let compute = tick_start.elapsed().as_secs_f64();
        if phase_at_start == EpisodePhase::Excitation || phase == EpisodePhase::Excitation {
            excitation_ticks += 1;
            excitation_compute += compute;
        }

        // metrics on the true state
        if phase == EpisodePhase::Excitation {
            let peak = state.omega_body.amax();
            report.max_rate_excitation = report.max_rate_excitation.max(peak);
            if peak > gyro_limit {
                report.gyro_saturated = true;
            }
        }
        if t >= t_switch {
            let since = t - t_switch;
            let err = (omega_r - state.omega_body).norm();
            let e0 = *report.rate_error_at_switch.get_or_insert(err);
            if report.rate_tracking_time.is_none() && err < 0.1 * e0 {
                report.rate_tracking_time = Some(since);
            }
            let tilt = state.tilt().to_degrees();
            if report.recovery_time.is_none()
                && since <= cfg.success.window
                && tilt < cfg.success.max_tilt
                && state.omega_body.norm() < cfg.success.max_rate
            {
                report.recovery_time = Some(since);
            }
            if since >= 2.0 {
                let m = report.max_tilt_after_2s.get_or_insert(tilt);
                *m = m.max(tilt);
            }
        }

        if let Some((log, _)) = log.as_mut() {
            let snapshot = k.is_multiple_of(40).then(|| ident.snapshot());
            log.write_tick(&super::log::TickRow {
                time: t,
                phase: phase.as_str(),
                excitation: excitation.as_ref(),
                state: &state,
                sample: &sample,
                cmd: &cmd,
                u: &u,
                nu_ref: &nu_ref,
                meas: &meas,
                attitude_error: attitude.angle_to(&state.attitude),
                position_error: (nav_state.position - state.position).norm(),
                theta: snapshot.as_ref(),
            })?;
        }

        // advance the plant
        if phase != EpisodePhase::Held {
            let next = step_dynamics(&state, &cmd, &vehicle, dt)?;
            prev_state = std::mem::replace(&mut state, next);
        }
        last_cmd = cmd;
        k += 1;
        report.min_altitude = report.min_altitude.min(state.altitude());
        if state.altitude() <= 0.0 {
            crashed = true;
            break;
        }
        if t_switch.is_finite() && k as f64 * dt > t_switch + cfg.success.window {
            break;
        }
        if !t_switch.is_finite() && k > max_ticks {
            break;
        }
    }

    if excitation_ticks > 0 {
        report.mean_tick_us = excitation_compute / excitation_ticks as f64 * 1e6;
        report.excitation_wall_s = excitation_compute;
    }
    if t_switch.is_finite() {
        report.final_position_error = Some((state.position - setpoint).norm());
    }
    report.success = !crashed && !report.gyro_saturated && report.fit_error.is_none() && report.recovery_time.is_some();
    if let Some((log, _)) = log.as_mut() {
        log.flush()?;
    }
    Ok(report)
}

fn switchover(
    cfg: &EpisodeConfig,
    ident: &Identifier,
    meas: &crate::indi::ControlMeasurements,
    attitude: &UnitQuaternion<f64>,
) -> Result<Control, String> {
    let params = ident.control_params().map_err(|e| e.to_string())?;
    let gains = tune_gains(params.mean_tau(), cfg.zetas).map_err(|e| e.to_string())?;
    let inner = InnerLoop::new(params, cfg.control_cutoff, cfg.sample_rate, meas);
    Ok(Control {
        inner,
        gains,
        reference: AttitudeReference::new(*attitude),
        psi: heading_of(attitude),
        omega_r_prev: None,
    })
}
