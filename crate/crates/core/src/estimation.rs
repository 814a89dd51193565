//! Complementary attitude filter and constant-gain position/velocity
//! observer fed by an external positioning system.

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::outer::heading_of;
use crate::sim::{gravity_vector, RigidBodyState, GRAVITY};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub attitude: UnitQuaternion<f64>,
    pub velocity: Vector3<f64>,
    pub position: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
}

impl NavState {
    pub fn new(attitude: UnitQuaternion<f64>) -> Self {
        Self {
            attitude,
            velocity: Vector3::zeros(),
            position: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserverGains {
    pub kp: f64,
    pub ki: f64,
    /// Accelerometer correction is skipped when `| ‖f‖ - g |` exceeds this
    /// fraction of g.
    pub accel_gate: f64,
    /// 1/s
    pub heading: f64,
    /// 1/s
    pub position: f64,
    /// 1/s
    pub velocity: f64,
    /// s
    pub fix_timeout: f64,
}

impl Default for ObserverGains {
    fn default() -> Self {
        Self {
            kp: 0.5,
            ki: 0.05,
            accel_gate: 0.3,
            heading: 0.5,
            position: 5.0,
            velocity: 2.0,
            fix_timeout: 0.1,
        }
    }
}

/// Attitude estimate from the accelerometer alone, yaw set to `heading`.
pub fn attitude_from_accel(specific_force: &Vector3<f64>, heading: f64) -> UnitQuaternion<f64> {
    let n = specific_force.norm();
    if !(n > 0.0) {
        return UnitQuaternion::from_euler_angles(0.0, 0.0, heading);
    }
    let d = -specific_force / n;
    let pitch = (-d.x).clamp(-1.0, 1.0).asin();
    let roll = d.y.atan2(d.z);
    UnitQuaternion::from_euler_angles(roll, pitch, heading)
}

fn wrap_angle(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    let w = (a + std::f64::consts::PI).rem_euclid(t) - std::f64::consts::PI;
    if w <= -std::f64::consts::PI {
        w + t
    } else {
        w
    }
}

/// One step of the complementary filter.
pub fn attitude_update(
    nav: &NavState,
    gyro: &Vector3<f64>,
    specific_force: &Vector3<f64>,
    dt: f64,
    gains: &ObserverGains,
) -> NavState {
    let mut out = *nav;
    let mut rate = gyro - nav.gyro_bias;
    let fnorm = specific_force.norm();
    if fnorm > 0.0 && (fnorm - GRAVITY).abs() <= gains.accel_gate * GRAVITY {
        let v_meas = -specific_force / fnorm;
        let v_est = nav.attitude.inverse() * Vector3::z();
        let e = v_meas.cross(&v_est);
        rate += gains.kp * e;
        out.gyro_bias -= gains.ki * e * dt;
    }
    out.attitude = nav.attitude * UnitQuaternion::from_scaled_axis(rate * dt);
    out.attitude.renormalize();
    out
}

/// Rotate the estimate about the inertial vertical toward a heading fix.
pub fn heading_update(nav: &NavState, heading: f64, dt: f64, gains: &ObserverGains) -> NavState {
    let err = wrap_angle(heading - heading_of(&nav.attitude));
    let mut out = *nav;
    out.attitude = UnitQuaternion::from_scaled_axis(Vector3::z() * gains.heading * err * dt) * nav.attitude;
    out.attitude.renormalize();
    out
}

/// Sample of the external positioning system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionFix {
    pub time: f64,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub heading: f64,
}

/// Dead-reckon with `accel_inertial`, then blend toward `fix` when it is
/// no older than the timeout.
pub fn posvel_update(
    nav: &NavState,
    accel_inertial: &Vector3<f64>,
    fix: Option<&PositionFix>,
    now: f64,
    dt: f64,
    gains: &ObserverGains,
) -> NavState {
    let mut out = *nav;
    out.position += nav.velocity * dt + accel_inertial * (0.5 * dt * dt);
    out.velocity += accel_inertial * dt;
    if let Some(fix) = fix {
        let age = now - fix.time;
        if (0.0..=gains.fix_timeout).contains(&age) {
            let p_fix = fix.position + fix.velocity * age;
            out.position += (p_fix - out.position) * (gains.position * dt);
            out.velocity += (fix.velocity - out.velocity) * (gains.velocity * dt);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixConfig {
    /// Hz
    pub rate: f64,
    /// m
    pub position_noise: f64,
    /// m/s
    pub velocity_noise: f64,
    /// rad
    pub heading_noise: f64,
}

impl Default for FixConfig {
    fn default() -> Self {
        Self {
            rate: 100.0,
            position_noise: 0.005,
            velocity_noise: 0.02,
            heading_noise: 0.01,
        }
    }
}

/// External positioning fixes sampled from the true state.
#[derive(Debug, Clone)]
pub struct FixSource {
    cfg: FixConfig,
    next_time: f64,
    latest: Option<PositionFix>,
}

fn gauss<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).map(|n| n.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    }
}

impl FixSource {
    pub fn new(cfg: FixConfig) -> Self {
        Self {
            cfg,
            next_time: 0.0,
            latest: None,
        }
    }

    /// Latest fix, refreshed when a new one is due at `now`.
    pub fn poll<R: Rng>(&mut self, truth: &RigidBodyState, now: f64, rng: &mut R) -> Option<&PositionFix> {
        if self.cfg.rate > 0.0 && now + 1e-9 >= self.next_time {
            let noise3 = |rng: &mut R, s: f64| Vector3::new(gauss(rng, s), gauss(rng, s), gauss(rng, s));
            let position = truth.position + noise3(rng, self.cfg.position_noise);
            let velocity = truth.velocity + noise3(rng, self.cfg.velocity_noise);
            let heading = wrap_angle(heading_of(&truth.attitude) + gauss(rng, self.cfg.heading_noise));
            self.latest = Some(PositionFix {
                time: now,
                position,
                velocity,
                heading,
            });
            self.next_time = now + 1.0 / self.cfg.rate;
        }
        self.latest.as_ref()
    }
}

/// Attitude filter plus position observer.
#[derive(Debug, Clone)]
pub struct Navigator {
    pub nav: NavState,
    gains: ObserverGains,
    last_heading_fix: f64,
}

impl Navigator {
    pub fn new(nav: NavState, gains: ObserverGains) -> Self {
        Self {
            nav,
            gains,
            last_heading_fix: f64::NEG_INFINITY,
        }
    }

    /// Initialize attitude from a static accelerometer reading and the
    /// position/heading of a fix.
    pub fn from_rest(specific_force: &Vector3<f64>, fix: &PositionFix, gains: ObserverGains) -> Self {
        let mut nav = NavState::new(attitude_from_accel(specific_force, fix.heading));
        nav.position = fix.position;
        nav.velocity = fix.velocity;
        Self::new(nav, gains)
    }

    pub fn step(
        &mut self,
        gyro: &Vector3<f64>,
        specific_force: &Vector3<f64>,
        fix: Option<&PositionFix>,
        now: f64,
        dt: f64,
    ) -> &NavState {
        let mut nav = attitude_update(&self.nav, gyro, specific_force, dt, &self.gains);
        if let Some(f) = fix {
            if f.time > self.last_heading_fix && now - f.time <= self.gains.fix_timeout {
                let since = if self.last_heading_fix.is_finite() {
                    (f.time - self.last_heading_fix).min(self.gains.fix_timeout)
                } else {
                    dt
                };
                nav = heading_update(&nav, f.heading, since, &self.gains);
                self.last_heading_fix = f.time;
            }
        }
        let accel = nav.attitude * specific_force + gravity_vector();
        self.nav = posvel_update(&nav, &accel, fix, now, dt, &self.gains);
        &self.nav
    }
}
