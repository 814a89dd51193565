//! Ground-truth quadrotor simulator.
//!
//! Frames: body x-forward, y-right, z-down; inertial frame z-down with
//! gravity `(0, 0, +g)`. Rotor thrust acts along body `-z`. Rotor speeds
//! follow a first-order lag towards the ESC steady-state speed and thrust is
//! quadratic in rotor speed.

use nalgebra::{Matrix3, Matrix3x4, Matrix6x4, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::SimError;

pub const GRAVITY: f64 = 9.81;

/// ±2000 °/s expressed in rad/s.
pub const DEFAULT_GYRO_LIMIT: f64 = 2000.0 * std::f64::consts::PI / 180.0;

/// Quadrant signs `(x, y)` of the four rotors: rear-right, front-right,
/// rear-left, front-left.
pub const ROTOR_QUADRANTS: [(f64, f64); 4] = [(-1.0, 1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];

/// Sign of the yaw reaction torque each rotor exerts on the airframe.
pub const ROTOR_REACTION_SIGNS: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];

pub fn gravity_vector() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, GRAVITY)
}

/// Physical description of one quadrotor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// Body-frame inertia tensor, kg·m².
    pub inertia: Matrix3<f64>,
    /// Body-frame rotor hub offsets from the centre of mass, m.
    pub rotor_positions: [Vector3<f64>; 4],
    /// Sign of the yaw reaction torque of each rotor on the airframe.
    pub rotor_spin_dirs: [f64; 4],
    /// Thrust constant `k` in `T = k ω²`, N·s²/rad².
    pub k_thrust: f64,
    /// Drag-torque to thrust ratio, m.
    pub moment_const: f64,
    /// Rotor + motor bell inertia about the spin axis, kg·m².
    pub rotor_inertia: f64,
    /// Motor time constant, s.
    pub tau: f64,
    /// ESC nonlinearity, dimensionless.
    pub kappa: f64,
    /// rad/s
    pub omega_max: f64,
    /// rad/s
    pub omega_idle: f64,
    /// Body-frame IMU position relative to the centre of mass, m.
    pub imu_offset: Vector3<f64>,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let scalars = [
            self.mass,
            self.k_thrust,
            self.moment_const,
            self.rotor_inertia,
            self.tau,
            self.kappa,
            self.omega_max,
            self.omega_idle,
        ];
        if scalars.iter().any(|v| !v.is_finite())
            || self.inertia.iter().any(|v| !v.is_finite())
            || self.rotor_positions.iter().any(|r| r.iter().any(|v| !v.is_finite()))
            || self.imu_offset.iter().any(|v| !v.is_finite())
        {
            return Err(SimError::InvalidVehicle("non-finite field".into()));
        }
        if self.mass <= 0.0 {
            return Err(SimError::InvalidVehicle("mass must be positive".into()));
        }
        if (self.inertia - self.inertia.transpose()).abs().max() > 1e-12 * self.inertia.abs().max() {
            return Err(SimError::InvalidVehicle("inertia must be symmetric".into()));
        }
        if self.inertia.cholesky().is_none() {
            return Err(SimError::InvalidVehicle("inertia must be positive definite".into()));
        }
        if self.tau <= 0.0 || self.kappa < 0.0 || self.k_thrust <= 0.0 {
            return Err(SimError::InvalidVehicle("tau, k must be > 0 and kappa >= 0".into()));
        }
        if !(self.omega_max > self.omega_idle && self.omega_idle >= 0.0) {
            return Err(SimError::InvalidVehicle("need omega_max > omega_idle >= 0".into()));
        }
        if !self.can_hover() {
            return Err(SimError::InvalidVehicle("vehicle cannot hover".into()));
        }
        Ok(())
    }

    /// `4 k ω_max² > m g`
    pub fn can_hover(&self) -> bool {
        4.0 * self.k_thrust * self.omega_max * self.omega_max > self.mass * GRAVITY
    }

    /// Rotor speed at which the four rotors exactly carry the weight.
    pub fn hover_rotor_speed(&self) -> f64 {
        (self.mass * GRAVITY / (4.0 * self.k_thrust)).sqrt()
    }

    /// Steady-state rotor speed for ESC input `delta`.
    pub fn steady_rotor_speed(&self, delta: f64) -> f64 {
        let d = delta.clamp(0.0, 1.0);
        self.omega_max * (self.kappa * d + (1.0 - self.kappa) * d.sqrt()) + self.omega_idle
    }

    /// ESC input that makes `omega` the steady-state rotor speed.
    pub fn delta_for_rotor_speed(&self, omega: f64) -> f64 {
        let sqrt_u = ((omega - self.omega_idle) / self.omega_max).clamp(0.0, 1.0);
        crate::indi::esc_invert(sqrt_u * sqrt_u, self.kappa)
    }
}

/// Uniform sampling ranges `(min, max)` for [`randomize_vehicle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamRanges {
    pub mass: (f64, f64),
    pub ixx: (f64, f64),
    pub iyy: (f64, f64),
    pub izz: (f64, f64),
    /// Longitudinal rotor offset magnitude, m.
    pub arm_x: (f64, f64),
    /// Lateral rotor offset magnitude, m.
    pub arm_y: (f64, f64),
    pub k_thrust: (f64, f64),
    pub moment_const: (f64, f64),
    /// Target yaw-row magnitude of the rotor-acceleration effectiveness,
    /// rad/s² per rad/s². The rotor inertia is derived from it.
    pub b2_yaw: (f64, f64),
    pub tau: (f64, f64),
    pub kappa: (f64, f64),
    pub omega_max: (f64, f64),
    pub omega_idle: (f64, f64),
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            mass: (0.35, 0.55),
            ixx: (4.5e-4, 7.0e-4),
            iyy: (4.5e-4, 7.0e-4),
            izz: (8.0e-4, 1.2e-3),
            arm_x: (0.045, 0.070),
            arm_y: (0.050, 0.075),
            k_thrust: (2.0e-7, 3.0e-7),
            moment_const: (0.010, 0.022),
            b2_yaw: (0.8e-3, 1.2e-3),
            tau: (0.015, 0.032),
            kappa: (0.2, 0.75),
            omega_max: (3600.0, 4600.0),
            omega_idle: (200.0, 500.0),
        }
    }
}

impl ParamRanges {
    /// All ranges collapsed to a single value each.
    pub fn point(p: &PointParams) -> Self {
        let c = |v: f64| (v, v);
        Self {
            mass: c(p.mass),
            ixx: c(p.ixx),
            iyy: c(p.iyy),
            izz: c(p.izz),
            arm_x: c(p.arm_x),
            arm_y: c(p.arm_y),
            k_thrust: c(p.k_thrust),
            moment_const: c(p.moment_const),
            b2_yaw: c(p.b2_yaw),
            tau: c(p.tau),
            kappa: c(p.kappa),
            omega_max: c(p.omega_max),
            omega_idle: c(p.omega_idle),
        }
    }

    fn fields(&self) -> [(&'static str, (f64, f64)); 13] {
        [
            ("mass", self.mass),
            ("ixx", self.ixx),
            ("iyy", self.iyy),
            ("izz", self.izz),
            ("arm_x", self.arm_x),
            ("arm_y", self.arm_y),
            ("k_thrust", self.k_thrust),
            ("moment_const", self.moment_const),
            ("b2_yaw", self.b2_yaw),
            ("tau", self.tau),
            ("kappa", self.kappa),
            ("omega_max", self.omega_max),
            ("omega_idle", self.omega_idle),
        ]
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, (lo, hi)) in self.fields() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(SimError::InvalidRange(name));
            }
        }
        Ok(())
    }
}

/// A single sample point of [`ParamRanges`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointParams {
    pub mass: f64,
    pub ixx: f64,
    pub iyy: f64,
    pub izz: f64,
    pub arm_x: f64,
    pub arm_y: f64,
    pub k_thrust: f64,
    pub moment_const: f64,
    pub b2_yaw: f64,
    pub tau: f64,
    pub kappa: f64,
    pub omega_max: f64,
    pub omega_idle: f64,
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Draw a random vehicle. Rotor offsets are drawn independently per rotor
/// inside their quadrant. Resamples until the vehicle can hover.
pub fn randomize_vehicle(rng_seed: u64, ranges: &ParamRanges) -> Result<VehicleParams, SimError> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for _ in 0..1000 {
        let mass = uniform(&mut rng, ranges.mass);
        let inertia = Matrix3::from_diagonal(&Vector3::new(
            uniform(&mut rng, ranges.ixx),
            uniform(&mut rng, ranges.iyy),
            uniform(&mut rng, ranges.izz),
        ));
        let mut rotor_positions = [Vector3::zeros(); 4];
        for (pos, (sx, sy)) in rotor_positions.iter_mut().zip(ROTOR_QUADRANTS) {
            *pos = Vector3::new(
                sx * uniform(&mut rng, ranges.arm_x),
                sy * uniform(&mut rng, ranges.arm_y),
                0.0,
            );
        }
        let k_thrust = uniform(&mut rng, ranges.k_thrust);
        let moment_const = uniform(&mut rng, ranges.moment_const);
        let b2_yaw = uniform(&mut rng, ranges.b2_yaw);
        let tau = uniform(&mut rng, ranges.tau);
        let kappa = uniform(&mut rng, ranges.kappa);
        let omega_max = uniform(&mut rng, ranges.omega_max);
        let omega_idle = uniform(&mut rng, ranges.omega_idle);
        let vehicle = VehicleParams {
            mass,
            inertia,
            rotor_positions,
            rotor_spin_dirs: ROTOR_REACTION_SIGNS,
            k_thrust,
            moment_const,
            rotor_inertia: b2_yaw * inertia[(2, 2)],
            tau,
            kappa,
            omega_max,
            omega_idle,
            imu_offset: Vector3::zeros(),
        };
        if vehicle.can_hover() && vehicle.validate().is_ok() {
            return Ok(vehicle);
        }
    }
    Err(SimError::HoverInfeasible)
}

/// Full simulator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyState {
    /// Inertial, m.
    pub position: Vector3<f64>,
    /// Inertial, m/s.
    pub velocity: Vector3<f64>,
    /// Body to inertial rotation.
    pub attitude: UnitQuaternion<f64>,
    /// Body rates, rad/s.
    pub omega_body: Vector3<f64>,
    /// rad/s
    pub rotor_speeds: [f64; 4],
}

impl RigidBodyState {
    pub fn at_rest(omega_idle: f64) -> Self {
        Self {
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            attitude: UnitQuaternion::identity(),
            omega_body: Vector3::zeros(),
            rotor_speeds: [omega_idle; 4],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.attitude.coords.iter().all(|v| v.is_finite())
            && self.omega_body.iter().all(|v| v.is_finite())
            && self.rotor_speeds.iter().all(|v| v.is_finite())
    }

    /// Height above the ground plane `z = 0`.
    pub fn altitude(&self) -> f64 {
        -self.position.z
    }

    /// Angle between body z and inertial z, rad.
    pub fn tilt(&self) -> f64 {
        let body_z = self.attitude * Vector3::z();
        body_z.z.clamp(-1.0, 1.0).acos()
    }
}

/// Thrust of each rotor, N.
pub fn rotor_thrusts(params: &VehicleParams, rotor_speeds: &[f64; 4]) -> [f64; 4] {
    rotor_speeds.map(|w| params.k_thrust * w * w)
}

/// Rotor accelerations for the given ESC commands.
pub fn rotor_accelerations(params: &VehicleParams, rotor_speeds: &[f64; 4], esc_cmds: &[f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = (params.steady_rotor_speed(esc_cmds[i]) - rotor_speeds[i]) / params.tau;
    }
    out
}

/// Body torque from thrust, drag torque and rotor spin-up reaction.
pub fn body_torque(params: &VehicleParams, rotor_speeds: &[f64; 4], rotor_accels: &[f64; 4]) -> Vector3<f64> {
    let thrusts = rotor_thrusts(params, rotor_speeds);
    let mut torque = Vector3::zeros();
    for i in 0..4 {
        let force = Vector3::new(0.0, 0.0, -thrusts[i]);
        torque += params.rotor_positions[i].cross(&force);
        torque.z +=
            params.rotor_spin_dirs[i] * (params.moment_const * thrusts[i] + params.rotor_inertia * rotor_accels[i]);
    }
    torque
}

/// Specific force at the centre of mass, body frame.
pub fn specific_force_cg(params: &VehicleParams, rotor_speeds: &[f64; 4]) -> Vector3<f64> {
    let total: f64 = rotor_thrusts(params, rotor_speeds).iter().sum();
    Vector3::new(0.0, 0.0, -total / params.mass)
}

#[derive(Clone, Copy)]
struct Derivative {
    velocity: Vector3<f64>,
    accel: Vector3<f64>,
    quat_dot: Quaternion<f64>,
    omega_dot: Vector3<f64>,
    rotor_accel: [f64; 4],
}

#[derive(Clone, Copy)]
struct RawState {
    position: Vector3<f64>,
    velocity: Vector3<f64>,
    quat: Quaternion<f64>,
    omega: Vector3<f64>,
    rotors: [f64; 4],
}

impl RawState {
    fn add(&self, d: &Derivative, h: f64) -> Self {
        let mut rotors = self.rotors;
        for (r, a) in rotors.iter_mut().zip(d.rotor_accel) {
            *r += a * h;
        }
        Self {
            position: self.position + d.velocity * h,
            velocity: self.velocity + d.accel * h,
            quat: self.quat + d.quat_dot * h,
            omega: self.omega + d.omega_dot * h,
            rotors,
        }
    }
}

struct Model<'a> {
    params: &'a VehicleParams,
    inertia_inv: Matrix3<f64>,
    steady: [f64; 4],
}

impl Model<'_> {
    fn derivative(&self, s: &RawState) -> Derivative {
        let p = self.params;
        let rotor_accel: [f64; 4] = std::array::from_fn(|i| (self.steady[i] - s.rotors[i]) / p.tau);
        let rot = UnitQuaternion::new_normalize(s.quat);
        let f_body = specific_force_cg(p, &s.rotors);
        let accel = rot * f_body + gravity_vector();
        let torque = body_torque(p, &s.rotors, &rotor_accel);
        let omega_dot = self.inertia_inv * (torque - s.omega.cross(&(p.inertia * s.omega)));
        let quat_dot = s.quat * Quaternion::from_parts(0.0, s.omega) * 0.5;
        Derivative {
            velocity: s.velocity,
            accel,
            quat_dot,
            omega_dot,
            rotor_accel,
        }
    }
}

/// Advance the rigid body by `dt` with ESC inputs held constant (RK4).
pub fn step_dynamics(
    state: &RigidBodyState,
    esc_cmds: &[f64; 4],
    params: &VehicleParams,
    dt: f64,
) -> Result<RigidBodyState, SimError> {
    if !state.is_finite() || esc_cmds.iter().any(|d| !d.is_finite()) {
        return Err(SimError::NonFinite);
    }
    if !(dt > 0.0 && dt <= 0.005) {
        return Err(SimError::InvalidStep(dt));
    }
    let inertia_inv = params
        .inertia
        .try_inverse()
        .ok_or_else(|| SimError::InvalidVehicle("singular inertia".into()))?;
    let steady = esc_cmds.map(|d| params.steady_rotor_speed(d));
    let model = Model {
        params,
        inertia_inv,
        steady,
    };
    let s0 = RawState {
        position: state.position,
        velocity: state.velocity,
        quat: *state.attitude.quaternion(),
        omega: state.omega_body,
        rotors: state.rotor_speeds,
    };
    let k1 = model.derivative(&s0);
    let k2 = model.derivative(&s0.add(&k1, dt / 2.0));
    let k3 = model.derivative(&s0.add(&k2, dt / 2.0));
    let k4 = model.derivative(&s0.add(&k3, dt));
    let mut rotors = s0.rotors;
    for (i, r) in rotors.iter_mut().enumerate() {
        *r += dt / 6.0 * (k1.rotor_accel[i] + 2.0 * k2.rotor_accel[i] + 2.0 * k3.rotor_accel[i] + k4.rotor_accel[i]);
        *r = r.max(0.0);
    }
    let w = dt / 6.0;
    let next = RigidBodyState {
        position: s0.position + (k1.velocity + k2.velocity * 2.0 + k3.velocity * 2.0 + k4.velocity) * w,
        velocity: s0.velocity + (k1.accel + k2.accel * 2.0 + k3.accel * 2.0 + k4.accel) * w,
        attitude: UnitQuaternion::new_normalize(
            s0.quat + (k1.quat_dot + k2.quat_dot * 2.0 + k3.quat_dot * 2.0 + k4.quat_dot) * w,
        ),
        omega_body: s0.omega + (k1.omega_dot + k2.omega_dot * 2.0 + k3.omega_dot * 2.0 + k4.omega_dot) * w,
        rotor_speeds: rotors,
    };
    if !next.is_finite() {
        return Err(SimError::NonFinite);
    }
    Ok(next)
}

/// White Gaussian noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseLevels {
    /// rad/s
    pub gyro: f64,
    /// m/s²
    pub accel: f64,
    /// rad/s
    pub rotor_speed: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self {
            gyro: 0.02,
            accel: 0.2,
            rotor_speed: 5.0,
        }
    }
}

impl NoiseLevels {
    pub fn zero() -> Self {
        Self {
            gyro: 0.0,
            accel: 0.0,
            rotor_speed: 0.0,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            gyro: self.gyro * factor,
            accel: self.accel * factor,
            rotor_speed: self.rotor_speed * factor,
        }
    }
}

/// Sensor suite configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub noise: NoiseLevels,
    /// Gyro measurement range, rad/s.
    pub gyro_limit: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            noise: NoiseLevels::default(),
            gyro_limit: DEFAULT_GYRO_LIMIT,
        }
    }
}

/// One 2 kHz sample of the onboard sensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    /// Saturated gyro, rad/s.
    pub gyro: Vector3<f64>,
    /// Body-frame specific force at the IMU, m/s².
    pub specific_force: Vector3<f64>,
    /// rad/s
    pub rotor_speeds: [f64; 4],
    /// Backward difference of the true rotor speeds, rad/s².
    pub rotor_accels: [f64; 4],
    /// s
    pub timestamp: f64,
}

fn noisy<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).map(|n| n.sample(rng)).unwrap_or(0.0)
    } else {
        0.0
    }
}

/// Sample the IMU and rotor-speed telemetry for `state`.
///
/// `prev_state` is the state one tick earlier; angular and rotor
/// accelerations are backward differences over `dt`.
pub fn sample_sensors<R: Rng>(
    state: &RigidBodyState,
    prev_state: &RigidBodyState,
    params: &VehicleParams,
    sensors: &SensorConfig,
    dt: f64,
    timestamp: f64,
    rng: &mut R,
) -> SensorSample {
    let n = sensors.noise;
    let omega = state.omega_body;
    let omega_dot = (omega - prev_state.omega_body) / dt;
    let r = params.imu_offset;
    let f = specific_force_cg(params, &state.rotor_speeds) + omega_dot.cross(&r) + omega.cross(&omega.cross(&r));

    let lim = sensors.gyro_limit;
    let mut gyro = Vector3::zeros();
    for i in 0..3 {
        gyro[i] = (omega[i] + noisy(rng, n.gyro)).clamp(-lim, lim);
    }
    let mut specific_force = Vector3::zeros();
    for i in 0..3 {
        specific_force[i] = f[i] + noisy(rng, n.accel);
    }
    let mut rotor_speeds = [0.0; 4];
    let mut rotor_accels = [0.0; 4];
    for i in 0..4 {
        rotor_speeds[i] = state.rotor_speeds[i] + noisy(rng, n.rotor_speed);
        rotor_accels[i] = (state.rotor_speeds[i] - prev_state.rotor_speeds[i]) / dt;
    }
    SensorSample {
        gyro,
        specific_force,
        rotor_speeds,
        rotor_accels,
        timestamp,
    }
}

/// Uniformly distributed random rotation.
pub fn random_attitude<R: Rng>(rng: &mut R) -> UnitQuaternion<f64> {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let u3: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    UnitQuaternion::new_normalize(Quaternion::new(b * u3.cos(), a * u2.sin(), a * u2.cos(), b * u3.sin()))
}

/// Release state of a vertical throw reaching `height` above the release
/// point, at the origin.
pub fn spawn_throw<R: Rng>(
    height: f64,
    omega0: Vector3<f64>,
    omega_idle: f64,
    rng: &mut R,
) -> Result<RigidBodyState, SimError> {
    if !(height > 0.0) || !height.is_finite() {
        return Err(SimError::InvalidThrow("height must be positive"));
    }
    if !(omega0.norm() <= 10.0 + 1e-12) {
        return Err(SimError::InvalidThrow("initial rotation above 10 rad/s"));
    }
    let v0 = (2.0 * GRAVITY * height).sqrt();
    Ok(RigidBodyState {
        position: Vector3::zeros(),
        velocity: Vector3::new(0.0, 0.0, -v0),
        attitude: random_attitude(rng),
        omega_body: omega0,
        rotor_speeds: [omega_idle; 4],
    })
}

/// Ground-truth effectiveness of a vehicle, in the units the identifier
/// estimates them: `B1·k` per (rad/s)² and `B2` per rad/s².
///
/// Rows of `b1k`: `fx fy fz ṗ q̇ ṙ`. Rows of `b2`: `ṗ q̇ ṙ`.
pub fn true_effectiveness(params: &VehicleParams) -> (Matrix6x4<f64>, Matrix3x4<f64>) {
    let inertia_inv = params.inertia.try_inverse().unwrap_or_else(Matrix3::zeros);
    let mut b1k = Matrix6x4::zeros();
    let mut b2 = Matrix3x4::zeros();
    for i in 0..4 {
        let k = params.k_thrust;
        let force = Vector3::new(0.0, 0.0, -k / params.mass);
        let torque_per_sq_speed = params.rotor_positions[i].cross(&Vector3::new(0.0, 0.0, -k))
            + Vector3::new(0.0, 0.0, params.rotor_spin_dirs[i] * params.moment_const * k);
        let rate = inertia_inv * torque_per_sq_speed;
        let accel = inertia_inv * Vector3::new(0.0, 0.0, params.rotor_spin_dirs[i] * params.rotor_inertia);
        for r in 0..3 {
            b1k[(r, i)] = force[r];
            b1k[(r + 3, i)] = rate[r];
            b2[(r, i)] = accel[r];
        }
    }
    (b1k, b2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn nominal() -> VehicleParams {
        randomize_vehicle(1, &ParamRanges::default()).unwrap()
    }

    fn symmetric() -> VehicleParams {
        randomize_vehicle(1, &ParamRanges::point(&reference_point())).unwrap()
    }

    fn reference_point() -> PointParams {
        PointParams {
            mass: 0.4,
            ixx: 5e-4,
            iyy: 6e-4,
            izz: 1e-3,
            arm_x: 0.05,
            arm_y: 0.06,
            k_thrust: 2.5e-7,
            moment_const: 0.015,
            b2_yaw: 1e-3,
            tau: 0.02,
            kappa: 0.46,
            omega_max: 4113.0,
            omega_idle: 450.0,
        }
    }

    #[test]
    fn same_seed_same_vehicle() {
        let r = ParamRanges::default();
        assert_eq!(randomize_vehicle(7, &r).unwrap(), randomize_vehicle(7, &r).unwrap());
        assert_ne!(randomize_vehicle(7, &r).unwrap(), randomize_vehicle(8, &r).unwrap());
    }

    #[test]
    fn point_ranges_give_that_vehicle() {
        let v = randomize_vehicle(99, &ParamRanges::point(&reference_point())).unwrap();
        assert_eq!(v.mass, 0.4);
        assert_eq!(v.inertia[(1, 1)], 6e-4);
        assert_eq!(v.rotor_positions[0], Vector3::new(-0.05, 0.06, 0.0));
        assert_eq!(v.rotor_positions[3], Vector3::new(0.05, -0.06, 0.0));
        assert_eq!(v.tau, 0.02);
        assert_eq!(v.kappa, 0.46);
        assert_relative_eq!(v.rotor_inertia, 1e-6, max_relative = 1e-12);
    }

    #[test]
    fn default_ranges_always_hover() {
        let r = ParamRanges::default();
        for seed in 0..1000 {
            let v = randomize_vehicle(seed, &r).unwrap();
            assert!(4.0 * v.k_thrust * v.omega_max.powi(2) > v.mass * GRAVITY);
        }
    }

    #[test]
    fn infeasible_ranges_fail() {
        let r = ParamRanges {
            mass: (50.0, 60.0),
            ..ParamRanges::default()
        };
        assert!(matches!(randomize_vehicle(3, &r), Err(SimError::HoverInfeasible)));
        let bad = ParamRanges {
            tau: (0.03, 0.01),
            ..ParamRanges::default()
        };
        assert!(matches!(randomize_vehicle(3, &bad), Err(SimError::InvalidRange("tau"))));
    }

    #[test]
    fn hover_equilibrium_holds() {
        let p = symmetric();
        let mut s = RigidBodyState::at_rest(p.hover_rotor_speed());
        let delta = p.delta_for_rotor_speed(p.hover_rotor_speed());
        let cmds = [delta; 4];
        for _ in 0..100 {
            s = step_dynamics(&s, &cmds, &p, 0.0005).unwrap();
        }
        assert!(s.velocity.norm() < 1e-6, "{}", s.velocity);
        assert!(s.omega_body.norm() < 1e-6, "{}", s.omega_body);
    }

    #[test]
    fn free_fall_follows_parabola() {
        let mut p = nominal();
        p.omega_idle = 0.0;
        let v0 = 5.0;
        let mut s = RigidBodyState::at_rest(0.0);
        s.velocity.z = -v0;
        let dt = 0.0005;
        for _ in 0..2000 {
            s = step_dynamics(&s, &[0.0; 4], &p, dt).unwrap();
        }
        let t = 1.0;
        // altitude = v0 t - g t²/2
        assert!((s.altitude() - (v0 * t - 0.5 * GRAVITY * t * t)).abs() < 1e-6);
        assert!(s.omega_body.norm() == 0.0);
    }

    #[test]
    fn torque_free_symmetric_body_keeps_rate() {
        let mut p = nominal();
        p.omega_idle = 0.0;
        p.inertia = Matrix3::identity() * 6e-4;
        let mut s = RigidBodyState::at_rest(0.0);
        s.omega_body = Vector3::new(3.0, -4.0, 7.0);
        let w0 = s.omega_body.norm();
        for _ in 0..2000 {
            s = step_dynamics(&s, &[0.0; 4], &p, 0.0005).unwrap();
        }
        assert!((s.omega_body.norm() - w0).abs() < 1e-9);
    }

    #[test]
    fn quaternion_norm_preserved_over_long_rollout() {
        let p = nominal();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = spawn_throw(4.0, Vector3::new(6.0, -5.0, 3.0), p.omega_idle, &mut rng).unwrap();
        for k in 0..20_000 {
            let cmds = [0.3 * ((k / 200) % 2) as f64, 0.1, 0.6, 0.0];
            s = step_dynamics(&s, &cmds, &p, 0.0005).unwrap();
            assert!((s.attitude.quaternion().norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rotor_step_response_recovers_tau() {
        let mut p = nominal();
        p.tau = 0.025;
        let mut s = RigidBodyState::at_rest(p.omega_idle);
        let target = p.steady_rotor_speed(0.7);
        let w0 = p.omega_idle;
        let dt = 0.0005;
        // log-linear fit of the remaining error over 60 ms
        let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 1..=120 {
            s = step_dynamics(&s, &[0.7; 4], &p, dt).unwrap();
            let t = k as f64 * dt;
            let y = ((target - s.rotor_speeds[0]) / (target - w0)).ln();
            sx += t;
            sy += y;
            sxx += t * t;
            sxy += t * y;
            n += 1.0;
        }
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let tau = -1.0 / slope;
        assert!((tau - 0.025).abs() / 0.025 < 0.01, "tau {tau}");
    }

    #[test]
    fn non_finite_or_bad_step_rejected() {
        let p = nominal();
        let mut s = RigidBodyState::at_rest(0.0);
        assert!(matches!(
            step_dynamics(&s, &[0.0; 4], &p, 0.01),
            Err(SimError::InvalidStep(_))
        ));
        s.velocity.x = f64::NAN;
        assert!(matches!(
            step_dynamics(&s, &[0.0; 4], &p, 0.0005),
            Err(SimError::NonFinite)
        ));
    }

    #[test]
    fn gyro_clamps_at_limit() {
        let p = nominal();
        let mut s = RigidBodyState::at_rest(p.omega_idle);
        s.omega_body = Vector3::new(40.0, 0.0, -50.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = SensorConfig {
            noise: NoiseLevels::zero(),
            ..SensorConfig::default()
        };
        let m = sample_sensors(&s, &s, &p, &cfg, 0.0005, 0.0, &mut rng);
        assert_relative_eq!(m.gyro.x, 34.9066, epsilon = 1e-4);
        assert_eq!(m.gyro.x, DEFAULT_GYRO_LIMIT);
        assert_eq!(m.gyro.z, -DEFAULT_GYRO_LIMIT);
    }

    #[test]
    fn hover_and_free_fall_specific_force() {
        let p = nominal();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = SensorConfig {
            noise: NoiseLevels::zero(),
            ..SensorConfig::default()
        };
        let s = RigidBodyState::at_rest(p.hover_rotor_speed());
        let m = sample_sensors(&s, &s, &p, &cfg, 0.0005, 0.0, &mut rng);
        assert_relative_eq!(m.specific_force, Vector3::new(0.0, 0.0, -GRAVITY), epsilon = 1e-9);

        let s = RigidBodyState::at_rest(0.0);
        let m = sample_sensors(&s, &s, &p, &cfg, 0.0005, 0.0, &mut rng);
        assert_eq!(m.specific_force.norm(), 0.0);
    }

    #[test]
    fn imu_lever_arm_adds_centripetal_term() {
        let mut p = nominal();
        p.imu_offset = Vector3::new(0.02, 0.0, 0.0);
        let mut s = RigidBodyState::at_rest(0.0);
        s.omega_body = Vector3::new(0.0, 0.0, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = SensorConfig {
            noise: NoiseLevels::zero(),
            ..SensorConfig::default()
        };
        let m = sample_sensors(&s, &s, &p, &cfg, 0.0005, 0.0, &mut rng);
        // ω × (ω × r) = -ω² r for r ⟂ ω
        assert_relative_eq!(m.specific_force.x, -100.0 * 0.02, epsilon = 1e-12);
    }

    #[test]
    fn throw_velocity_and_apex() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = spawn_throw(4.0, Vector3::zeros(), 0.0, &mut rng).unwrap();
        assert_relative_eq!(-s.velocity.z, 8.859, epsilon = 1e-3);

        let mut p = nominal();
        p.omega_idle = 0.0;
        p.inertia = Matrix3::identity() * 5e-4;
        let mut s = spawn_throw(3.5, Vector3::zeros(), 0.0, &mut rng).unwrap();
        let mut apex: f64 = 0.0;
        let dt = 0.0005;
        let t_apex = (2.0 * GRAVITY * 3.5).sqrt() / GRAVITY;
        let mut t = 0.0;
        while t < 1.2 * t_apex {
            s = step_dynamics(&s, &[0.0; 4], &p, dt).unwrap();
            t += dt;
            apex = apex.max(s.altitude());
            assert!(s.omega_body.norm() == 0.0);
        }
        // sampled maximum is within ½ g dt² of the true apex
        assert!((apex - 3.5).abs() < 1e-6, "{apex}");
        assert!(spawn_throw(0.0, Vector3::zeros(), 0.0, &mut rng).is_err());
        assert!(spawn_throw(4.0, Vector3::new(11.0, 0.0, 0.0), 0.0, &mut rng).is_err());
    }

    #[test]
    fn symmetric_vehicle_effectiveness_is_antisymmetric() {
        let p = PointParams {
            mass: 0.4,
            ixx: 5e-4,
            iyy: 5e-4,
            izz: 1e-3,
            arm_x: 0.06,
            arm_y: 0.06,
            k_thrust: 2.5e-7,
            moment_const: 0.015,
            b2_yaw: 1e-3,
            tau: 0.02,
            kappa: 0.46,
            omega_max: 4113.0,
            omega_idle: 450.0,
        };
        let v = randomize_vehicle(0, &ParamRanges::point(&p)).unwrap();
        let (b1k, b2) = true_effectiveness(&v);
        // roll: right rotors (0,1) vs left rotors (2,3)
        assert_relative_eq!(b1k[(3, 0)], -b1k[(3, 2)], max_relative = 1e-12);
        assert_relative_eq!(b1k[(3, 1)], -b1k[(3, 3)], max_relative = 1e-12);
        assert!(b1k[(3, 0)] < 0.0);
        // pitch: rear (0,2) vs front (1,3)
        assert_relative_eq!(b1k[(4, 0)], -b1k[(4, 1)], max_relative = 1e-12);
        assert!(b1k[(4, 0)] < 0.0);
        assert!(b1k.row(2).iter().all(|v| *v < 0.0));
        assert_eq!(b2[(0, 0)], 0.0);
        assert_relative_eq!(b2[(2, 0)], -1e-3, max_relative = 1e-12);

        let mut heavy = v.clone();
        heavy.mass *= 2.0;
        let (b1k_heavy, _) = true_effectiveness(&heavy);
        assert_relative_eq!(b1k_heavy[(2, 0)], 0.5 * b1k[(2, 0)], max_relative = 1e-12);
    }

    #[test]
    fn effectiveness_oracle_matches_rollout() {
        // Exact (non-incremental) form: ν = B1k ω² + B2 ω̇ + gyroscopic term.
        let p = nominal();
        let (b1k, b2) = true_effectiveness(&p);
        let s = RigidBodyState {
            omega_body: Vector3::new(0.5, -1.0, 2.0),
            rotor_speeds: [1500.0, 2500.0, 3000.0, 900.0],
            ..RigidBodyState::at_rest(0.0)
        };
        let cmds = [0.9, 0.1, 0.4, 0.7];
        let dt = 1e-6;
        let next = step_dynamics(&s, &cmds, &p, dt).unwrap();
        let omega_dot = (next.omega_body - s.omega_body) / dt;
        let accel = rotor_accelerations(&p, &s.rotor_speeds, &cmds);
        let sq = nalgebra::Vector4::from(s.rotor_speeds.map(|w| w * w));
        let wdot = nalgebra::Vector4::from(accel);
        let gyro_term = p.inertia.try_inverse().unwrap() * (-s.omega_body.cross(&(p.inertia * s.omega_body)));
        let predicted = (b1k * sq).fixed_rows::<3>(3) + b2 * wdot + gyro_term;
        assert_relative_eq!(omega_dot, predicted.into_owned(), max_relative = 1e-3);
        let f = (b1k * sq).fixed_rows::<3>(0).into_owned();
        assert_relative_eq!(f, specific_force_cg(&p, &s.rotor_speeds), max_relative = 1e-12);
    }
}
