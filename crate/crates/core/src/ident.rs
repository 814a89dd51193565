//! Online identification of the motor model and the control effectiveness.
//!
//! Motor model, per rotor, on 20 Hz filtered signals:
//! `ω = a δ + b √δ + ω_idle - τ ω̇` with `ω_max = a + b`, `κ = a / (a + b)`.
//!
//! Effectiveness model, on one-step increments of filtered signals:
//! `Δν = B1k (2 ω Δω) + B2 Δω̇`, where the force rows carry no `B2` term.
//! The three force rows share one 4-regressor covariance, the three rate
//! rows share one 8-regressor covariance.

use nalgebra::{Matrix3x4, Matrix6x4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::IdentError;
use crate::filters::{butter2_design, DiffBank, FilterBank};
use crate::rls::{forgetting_factor, RlsState, SharedRlsState, DEFAULT_P0};
use crate::sim::{true_effectiveness, SensorSample, VehicleParams};

pub const PARAM_COUNT: usize = 52;

/// Motor-model fit of one rotor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorFit {
    pub a: f64,
    pub b: f64,
    pub omega_idle: f64,
    pub tau: f64,
}

impl MotorFit {
    fn from_theta(theta: &[f64]) -> Self {
        Self {
            a: theta[0],
            b: theta[1],
            omega_idle: theta[2],
            tau: theta[3],
        }
    }

    pub fn omega_max(&self) -> f64 {
        self.a + self.b
    }
}

/// `(ω_max, κ)` from the parameter-linear pair `(a, b)`. `κ` is clamped to
/// `[0, 1.5]`.
pub fn motor_params(a: f64, b: f64) -> Result<(f64, f64), IdentError> {
    let sum = a + b;
    if !(sum > 0.0) {
        return Err(IdentError::InvalidMotorFit { motor: 0, sum });
    }
    Ok((sum, (a / sum).clamp(0.0, 1.5)))
}

/// Regressor `(δ, √δ, 1, -ω̇)` and target `ω` of the motor model.
pub fn motor_regressor(delta: f64, omega_f: f64, omega_dot_f: f64) -> ([f64; 4], f64) {
    let d = delta.clamp(0.0, 1.0);
    ([d, d.sqrt(), 1.0, -omega_dot_f], omega_f)
}

/// `(2ω₁Δω₁, …, 2ω₄Δω₄, Δω̇₁, …, Δω̇₄)`, the small-increment form of the
/// effectiveness regressor. [`Identifier`] uses the increment of filtered
/// `ω²` in place of `2ωΔω`; the two agree to first order, but only the
/// former keeps the filtered relation exact during fast spin-ups.
pub fn effectiveness_regressor(omega_f: &[f64; 4], d_omega: &[f64; 4], d_omega_dot: &[f64; 4]) -> [f64; 8] {
    let mut x = [0.0; 8];
    for i in 0..4 {
        x[i] = 2.0 * omega_f[i] * d_omega[i];
        x[i + 4] = d_omega_dot[i];
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectivenessFit {
    /// Rows `fx fy fz ṗ q̇ ṙ`.
    pub b1k: Matrix6x4<f64>,
    /// Rows `ṗ q̇ ṙ`.
    pub b2: Matrix3x4<f64>,
}

/// The 52 quantities the controller runs on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub b1k: Matrix6x4<f64>,
    pub b2: Matrix3x4<f64>,
    pub omega_max: [f64; 4],
    pub kappa: [f64; 4],
    pub omega_idle: [f64; 4],
    pub tau: [f64; 4],
}

/// Names and print multipliers of the 13 table rows, in the order [`ControlParams::to_array`] stores them.
pub const PARAM_ROWS: [(&str, f64); 13] = [
    ("B1x*k*1e6", 1e6),
    ("B1y*k*1e6", 1e6),
    ("B1z*k*1e6", 1e6),
    ("B1p*k*1e6", 1e6),
    ("B1q*k*1e6", 1e6),
    ("B1r*k*1e6", 1e6),
    ("B2p*1e3", 1e3),
    ("B2q*1e3", 1e3),
    ("B2r*1e3", 1e3),
    ("omega_max", 1.0),
    ("kappa", 1.0),
    ("omega_idle", 1.0),
    ("tau[ms]", 1e3),
];

impl ControlParams {
    /// Ground truth of a simulated vehicle.
    pub fn from_vehicle(v: &VehicleParams) -> Self {
        let (b1k, b2) = true_effectiveness(v);
        Self {
            b1k,
            b2,
            omega_max: [v.omega_max; 4],
            kappa: [v.kappa; 4],
            omega_idle: [v.omega_idle; 4],
            tau: [v.tau; 4],
        }
    }

    /// Row-major by table row, 4 motors per row.
    pub fn to_array(&self) -> [f64; PARAM_COUNT] {
        let mut out = [0.0; PARAM_COUNT];
        for r in 0..6 {
            for m in 0..4 {
                out[r * 4 + m] = self.b1k[(r, m)];
            }
        }
        for r in 0..3 {
            for m in 0..4 {
                out[24 + r * 4 + m] = self.b2[(r, m)];
            }
        }
        out[36..40].copy_from_slice(&self.omega_max);
        out[40..44].copy_from_slice(&self.kappa);
        out[44..48].copy_from_slice(&self.omega_idle);
        out[48..52].copy_from_slice(&self.tau);
        out
    }

    pub fn from_array(v: &[f64; PARAM_COUNT]) -> Self {
        let mut p = Self {
            b1k: Matrix6x4::zeros(),
            b2: Matrix3x4::zeros(),
            omega_max: [0.0; 4],
            kappa: [0.0; 4],
            omega_idle: [0.0; 4],
            tau: [0.0; 4],
        };
        for r in 0..6 {
            for m in 0..4 {
                p.b1k[(r, m)] = v[r * 4 + m];
            }
        }
        for r in 0..3 {
            for m in 0..4 {
                p.b2[(r, m)] = v[24 + r * 4 + m];
            }
        }
        p.omega_max.copy_from_slice(&v[36..40]);
        p.kappa.copy_from_slice(&v[40..44]);
        p.omega_idle.copy_from_slice(&v[44..48]);
        p.tau.copy_from_slice(&v[48..52]);
        p
    }

    pub fn mean_tau(&self) -> f64 {
        self.tau.iter().sum::<f64>() / 4.0
    }

    /// Raw combination of fits, no validity gates.
    pub fn unchecked(motors: &[MotorFit; 4], eff: &EffectivenessFit) -> Self {
        let mut omega_max = [0.0; 4];
        let mut kappa = [0.0; 4];
        for (m, fit) in motors.iter().enumerate() {
            let sum = fit.omega_max();
            omega_max[m] = sum;
            kappa[m] = if sum > 0.0 { (fit.a / sum).clamp(0.0, 1.5) } else { 0.0 };
        }
        Self {
            b1k: eff.b1k,
            b2: eff.b2,
            omega_max,
            kappa,
            omega_idle: motors.map(|m| m.omega_idle),
            tau: motors.map(|m| m.tau),
        }
    }
}

/// Combine fits and apply the validity gates.
pub fn assemble_control_params(motors: &[MotorFit; 4], eff: &EffectivenessFit) -> Result<ControlParams, IdentError> {
    for (m, fit) in motors.iter().enumerate() {
        let (omega_max, _) = motor_params(fit.a, fit.b).map_err(|_| IdentError::InvalidMotorFit {
            motor: m,
            sum: fit.a + fit.b,
        })?;
        if !(500.0..=20_000.0).contains(&omega_max) {
            return Err(IdentError::OmegaMaxGate {
                motor: m,
                value: omega_max,
            });
        }
        if !(0.002..=0.2).contains(&fit.tau) {
            return Err(IdentError::TauGate {
                motor: m,
                value: fit.tau,
            });
        }
        if !(eff.b1k[(2, m)] < 0.0) {
            return Err(IdentError::ThrustSignGate {
                motor: m,
                value: eff.b1k[(2, m)],
            });
        }
    }
    Ok(ControlParams::unchecked(motors, eff))
}

/// Fixed regressor/output scale factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentScales {
    /// rad/s
    pub omega: f64,
    /// rad/s²
    pub omega_dot: f64,
    /// Scale of filtered `ω²` increments per step, rad²/s².
    pub thrust_increment: f64,
    /// Scale of `Δω̇` per step, rad/s².
    pub omega_dot_increment: f64,
    /// Scale of specific-force increments per step, m/s².
    pub force_increment: f64,
    /// Scale of angular-acceleration increments per step, rad/s².
    pub rate_increment: f64,
}

impl Default for IdentScales {
    fn default() -> Self {
        Self {
            omega: 1e3,
            omega_dot: 1e4,
            thrust_increment: 1e5,
            omega_dot_increment: 1e3,
            force_increment: 0.1,
            rate_increment: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Filtered {
    nu: [f64; 6],
    omega: [f64; 4],
    omega_dot: [f64; 4],
    delta: [f64; 4],
    sqrt_delta: [f64; 4],
    /// `ω² - ω²_prev`
    omega_sq: [f64; 4],
    sq_increment: [f64; 4],
}

/// Regressors and measured `Δν` of one identification step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Increments {
    /// Increments of filtered `ω²`.
    pub force_x: [f64; 4],
    /// Midpoint `ω²` increments, then `Δω̇`.
    pub rate_x: [f64; 8],
    /// `fx fy fz ṗ q̇ ṙ`
    pub d_nu: [f64; 6],
}

/// Filters plus the RLS bank: 3 force filters and 3 rate filters on two
/// shared covariances, and 4 motor filters.
#[derive(Debug, Clone)]
pub struct Identifier {
    specific_force: FilterBank<3>,
    gyro: DiffBank<3>,
    rotor: DiffBank<4>,
    rotor_sq: FilterBank<4>,
    delta: FilterBank<4>,
    sqrt_delta: FilterBank<4>,
    prev: Option<Filtered>,
    force: SharedRlsState<f64>,
    rate: SharedRlsState<f64>,
    motors: [RlsState<f64>; 4],
    imu_offset: Vector3<f64>,
    updates: usize,
    last: Option<Increments>,
}

impl Identifier {
    pub fn new(cutoff_hz: f64, sample_rate_hz: f64, scales: &IdentScales, imu_offset: Vector3<f64>) -> Self {
        let dt = 1.0 / sample_rate_hz;
        let proto = butter2_design(cutoff_hz, sample_rate_hz).expect("identification cutoff");
        let lambda = forgetting_factor(dt);
        let s = scales;
        let force = SharedRlsState::new(4, 3, DEFAULT_P0)
            .and_then(|r| r.with_forgetting(lambda))
            .and_then(|r| r.with_scales(&[s.thrust_increment; 4], &[s.force_increment; 3]))
            .expect("force filter settings");
        let t = s.thrust_increment;
        let d = s.omega_dot_increment;
        let rate = SharedRlsState::new(8, 3, DEFAULT_P0)
            .and_then(|r| r.with_forgetting(lambda))
            .and_then(|r| r.with_scales(&[t, t, t, t, d, d, d, d], &[s.rate_increment; 3]))
            .expect("rate filter settings");
        let motor = RlsState::new(4, DEFAULT_P0)
            .and_then(|r| r.with_forgetting(lambda))
            .and_then(|r| r.with_scales(&[1.0, 1.0, 1.0, s.omega_dot], s.omega))
            .expect("motor filter settings");
        Self {
            specific_force: FilterBank::new(proto),
            gyro: DiffBank::new(proto, dt),
            rotor: DiffBank::new(proto, dt),
            rotor_sq: FilterBank::new(proto),
            delta: FilterBank::new(proto),
            sqrt_delta: FilterBank::new(proto),
            prev: None,
            force,
            rate,
            motors: [motor.clone(), motor.clone(), motor.clone(), motor],
            imu_offset,
            updates: 0,
            last: None,
        }
    }

    /// Feed one tick. `delta` is the ESC command that was applied over the
    /// step ending at `sample`. With `update = false` only the filters run.
    pub fn ident_step(&mut self, sample: &SensorSample, delta: &[f64; 4], update: bool) -> Result<(), IdentError> {
        let f = self.specific_force.step(&[
            sample.specific_force.x,
            sample.specific_force.y,
            sample.specific_force.z,
        ]);
        let (rates, rate_dot) = self.gyro.step(&[sample.gyro.x, sample.gyro.y, sample.gyro.z]);
        let (omega, omega_dot) = self.rotor.step(&sample.rotor_speeds);
        // ω² is filtered as a signal of its own; squaring the filtered
        // speed would break the filtered incremental relation
        let omega_sq = self.rotor_sq.step(&sample.rotor_speeds.map(|w| w * w));
        let d = delta.map(|v| v.clamp(0.0, 1.0));
        let delta_f = self.delta.step(&d);
        let sqrt_delta_f = self.sqrt_delta.step(&d.map(f64::sqrt));

        let w = Vector3::from(rates);
        let wd = Vector3::from(rate_dot);
        let r = self.imu_offset;
        let f_cg = Vector3::from(f) - wd.cross(&r) - w.cross(&w.cross(&r));
        let mut current = Filtered {
            nu: [f_cg.x, f_cg.y, f_cg.z, rate_dot[0], rate_dot[1], rate_dot[2]],
            omega,
            omega_dot,
            omega_sq,
            delta: delta_f,
            sqrt_delta: sqrt_delta_f,
            sq_increment: [0.0; 4],
        };
        if let Some(prev) = &self.prev {
            current.sq_increment = std::array::from_fn(|i| omega_sq[i] - prev.omega_sq[i]);
        }
        let Some(prev) = self.prev.replace(current) else {
            return Ok(());
        };
        let d_nu: [f64; 6] = std::array::from_fn(|i| current.nu[i] - prev.nu[i]);
        // specific force is instantaneous; angular acceleration is a
        // backward difference, i.e. a step average, so its rotor terms are
        // taken at step midpoints
        let mut x_rate = [0.0; 8];
        for i in 0..4 {
            x_rate[i] = 0.5 * (current.sq_increment[i] + prev.sq_increment[i]);
            x_rate[i + 4] = current.omega_dot[i] - prev.omega_dot[i];
        }
        self.last = Some(Increments {
            force_x: current.sq_increment,
            rate_x: x_rate,
            d_nu,
        });
        if !update {
            return Ok(());
        }
        self.force.update(&current.sq_increment, &d_nu[..3])?;
        self.rate.update(&x_rate, &d_nu[3..])?;
        for m in 0..4 {
            // ω̇ is a backward difference over the step driven by the
            // current command, so ω is taken at the midpoint of that step
            let omega_mid = 0.5 * (current.omega[m] + prev.omega[m]);
            let (_, y) = motor_regressor(0.0, omega_mid, current.omega_dot[m]);
            let xm = [current.delta[m], current.sqrt_delta[m], 1.0, -current.omega_dot[m]];
            self.motors[m].update(&xm, y)?;
        }
        self.updates += 1;
        Ok(())
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Regressors of the most recent step, whether or not it updated the
    /// estimates.
    pub fn last_increments(&self) -> Option<&Increments> {
        self.last.as_ref()
    }

    pub fn motor_fits(&self) -> [MotorFit; 4] {
        std::array::from_fn(|m| MotorFit::from_theta(self.motors[m].theta().as_slice()))
    }

    pub fn effectiveness(&self) -> EffectivenessFit {
        let mut b1k = Matrix6x4::zeros();
        let mut b2 = Matrix3x4::zeros();
        for row in 0..3 {
            let tf = self.force.theta(row);
            let tr = self.rate.theta(row);
            for m in 0..4 {
                b1k[(row, m)] = tf[m];
                b1k[(row + 3, m)] = tr[m];
                b2[(row, m)] = tr[m + 4];
            }
        }
        EffectivenessFit { b1k, b2 }
    }

    /// Current estimates without validity gates.
    pub fn snapshot(&self) -> ControlParams {
        ControlParams::unchecked(&self.motor_fits(), &self.effectiveness())
    }

    /// Gated parameter set for the controller.
    pub fn control_params(&self) -> Result<ControlParams, IdentError> {
        assemble_control_params(&self.motor_fits(), &self.effectiveness())
    }

    pub fn force_covariance_trace(&self) -> f64 {
        self.force.cov().trace()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{randomize_vehicle, step_dynamics, NoiseLevels, ParamRanges, RigidBodyState, SensorConfig};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn motor_regressor_construction() {
        assert_eq!(
            motor_regressor(0.25, 1500.0, 5000.0),
            ([0.25, 0.5, 1.0, -5000.0], 1500.0)
        );
        assert_eq!(motor_regressor(0.0, 300.0, 7.0), ([0.0, 0.0, 1.0, -7.0], 300.0));
    }

    #[test]
    fn motor_param_mapping() {
        assert_eq!(motor_params(0.0, 4113.0).unwrap(), (4113.0, 0.0));
        assert_eq!(motor_params(700.0, 700.0).unwrap().1, 0.5);
        let (a, b) = (0.46 * 4113.0, 0.54 * 4113.0);
        assert_relative_eq!(a, 1891.98, epsilon = 1e-9);
        assert_relative_eq!(b, 2221.02, epsilon = 1e-9);
        let (w, k) = motor_params(a, b).unwrap();
        assert_relative_eq!(w, 4113.0, epsilon = 1e-9);
        assert_relative_eq!(k, 0.46, epsilon = 1e-12);
        assert!(motor_params(-5.0, 5.0).is_err());
        assert_eq!(motor_params(-100.0, 1000.0).unwrap().1, 0.0);
        assert_eq!(motor_params(4000.0, -1500.0).unwrap().1, 1.5);
    }

    #[test]
    fn effectiveness_regressor_construction() {
        let x = effectiveness_regressor(&[2000.0; 4], &[10.0, 0.0, 0.0, 0.0], &[0.0; 4]);
        assert_eq!(x, [40000.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(effectiveness_regressor(&[0.0; 4], &[0.0; 4], &[0.0; 4]), [0.0; 8]);
    }

    fn reference_params() -> ControlParams {
        let mut p = ControlParams::from_array(&[0.0; PARAM_COUNT]);
        for m in 0..4 {
            p.b1k[(2, m)] = -0.621e-6;
            p.omega_max[m] = 4113.0;
            p.kappa[m] = 0.47;
            p.tau[m] = 0.023835;
        }
        p
    }

    fn fits_of(p: &ControlParams) -> ([MotorFit; 4], EffectivenessFit) {
        let motors = std::array::from_fn(|m| MotorFit {
            a: p.kappa[m] * p.omega_max[m],
            b: (1.0 - p.kappa[m]) * p.omega_max[m],
            omega_idle: p.omega_idle[m],
            tau: p.tau[m],
        });
        (motors, EffectivenessFit { b1k: p.b1k, b2: p.b2 })
    }

    #[test]
    fn gates_accept_reference_and_reject_bad_fits() {
        let p = reference_params();
        let (motors, eff) = fits_of(&p);
        let out = assemble_control_params(&motors, &eff).unwrap();
        assert_eq!(out.to_array().len(), PARAM_COUNT);

        let mut bad = motors;
        bad[2].tau = 0.0;
        assert!(matches!(
            assemble_control_params(&bad, &eff),
            Err(IdentError::TauGate { motor: 2, .. })
        ));

        let mut flipped = eff;
        flipped.b1k[(2, 1)] = 0.621e-6;
        assert!(matches!(
            assemble_control_params(&motors, &flipped),
            Err(IdentError::ThrustSignGate { motor: 1, .. })
        ));

        let mut slow = motors;
        slow[0].a = 100.0;
        slow[0].b = 100.0;
        assert!(matches!(
            assemble_control_params(&slow, &eff),
            Err(IdentError::OmegaMaxGate { motor: 0, .. })
        ));
    }

    #[test]
    fn array_round_trip() {
        let v = randomize_vehicle(3, &ParamRanges::default()).unwrap();
        let p = ControlParams::from_vehicle(&v);
        assert_eq!(ControlParams::from_array(&p.to_array()), p);
    }

    /// Drive a single motor with a varied δ profile and fit its model.
    #[test]
    fn single_motor_model_recovered_noiseless() {
        let mut v = randomize_vehicle(0, &ParamRanges::default()).unwrap();
        v.omega_max = 4113.0;
        v.kappa = 0.46;
        v.omega_idle = 450.0;
        v.tau = 0.02;
        let dt = 0.0005;
        let cfg = SensorConfig {
            noise: NoiseLevels::zero(),
            ..SensorConfig::default()
        };
        let mut id = Identifier::new(20.0, 2000.0, &IdentScales::default(), Vector3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = RigidBodyState::at_rest(v.omega_idle);
        for k in 0..1200 {
            let t = k as f64 * dt - 0.1;
            // idle, then steps followed by a falling ramp, repeated
            let phase = t.rem_euclid(0.125);
            let d0 = if t < 0.0 {
                0.0
            } else if phase < 0.035 || (0.05..0.075).contains(&phase) {
                1.0
            } else if phase >= 0.075 {
                1.0 - (phase - 0.075) / 0.05
            } else {
                0.0
            };
            let cmds = [d0, 0.0, 0.0, 0.0];
            let prev = s.clone();
            s = step_dynamics(&s, &cmds, &v, dt).unwrap();
            s.omega_body = nalgebra::Vector3::zeros();
            let m = crate::sim::sample_sensors(&s, &prev, &v, &cfg, dt, t, &mut rng);
            id.ident_step(&m, &cmds, t >= 0.0).unwrap();
        }
        let fit = id.motor_fits()[0];
        let (w, kappa) = motor_params(fit.a, fit.b).unwrap();
        assert!((w - 4113.0).abs() / 4113.0 < 0.01, "omega_max {w}");
        assert!((fit.tau - 0.02).abs() / 0.02 < 0.05, "tau {}", fit.tau);
        assert!((kappa - 0.46).abs() < 0.05, "kappa {kappa}");
        assert!((fit.omega_idle - 450.0).abs() < 20.0, "idle {}", fit.omega_idle);
    }
}
