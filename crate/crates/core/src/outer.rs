//! Attitude, position and acceleration loops around the INDI inner loop,
//! and gain selection by pole placement.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::ControlError;
use crate::sim::{gravity_vector, GRAVITY};

/// `(ζ_D, ζ_A, ζ_V, ζ_P)`
pub const DEFAULT_ZETAS: [f64; 4] = [0.8, 0.7, 0.7, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    pub d: Vector3<f64>,
    pub a: Vector3<f64>,
    pub v: Vector3<f64>,
    pub p: Vector3<f64>,
    pub zetas: [f64; 4],
}

/// Each stage places the damping of `τ_eq s² + s + k` at its ζ and is then
/// treated as a first-order lag `k / (s + k)` by the next stage.
pub fn tune_gains(tau: f64, zetas: [f64; 4]) -> Result<Gains, ControlError> {
    if !(0.002..=0.2).contains(&tau) {
        return Err(ControlError::TauOutOfRange(tau));
    }
    if !zetas.iter().all(|z| *z > 0.0 && z.is_finite()) {
        return Err(ControlError::InvalidDamping);
    }
    let stage = |tau_eq: f64, zeta: f64| 1.0 / (4.0 * zeta * zeta * tau_eq);
    let d = stage(tau, zetas[0]);
    let a = stage(1.0 / d, zetas[1]);
    let v = stage(1.0 / a, zetas[2]);
    let p = stage(1.0 / v, zetas[3]);
    Ok(Gains {
        d: Vector3::repeat(d),
        a: Vector3::repeat(a),
        v: Vector3::repeat(v),
        p: Vector3::repeat(p),
        zetas,
    })
}

/// Body-rate reference from the body-frame error quaternion `q⁻¹ q_r`.
pub fn attitude_rates(q: &UnitQuaternion<f64>, q_r: &UnitQuaternion<f64>, a: &Vector3<f64>) -> Vector3<f64> {
    let mut qe = *(q.inverse() * q_r).quaternion();
    if qe.w < 0.0 {
        qe = -qe;
    }
    let v = qe.imag();
    let n = v.norm();
    if n < 1e-9 {
        return Vector3::zeros();
    }
    let theta = 2.0 * qe.w.clamp(-1.0, 1.0).acos();
    (v / n).component_mul(a) * theta
}

/// Angular-acceleration part of the pseudo-control reference.
pub fn rate_to_nu(omega_r: &Vector3<f64>, omega: &Vector3<f64>, d: &Vector3<f64>) -> Vector3<f64> {
    (omega_r - omega).component_mul(d)
}

/// Attitude and body-z specific force that produce inertial acceleration
/// `a_r` with heading `psi`.
pub fn position_ndi(a_r: &Vector3<f64>, psi: f64) -> Result<(UnitQuaternion<f64>, f64), ControlError> {
    let f = a_r - gravity_vector();
    let fnorm = f.norm();
    if !(fnorm > 0.1 * GRAVITY) {
        return Err(ControlError::DegenerateThrust);
    }
    let b3 = -f / fnorm;
    let xc = Vector3::new(psi.cos(), psi.sin(), 0.0);
    let cross = b3.cross(&xc);
    let (b1, b2) = if cross.norm() > 1e-6 {
        let b2 = cross.normalize();
        (b2.cross(&b3), b2)
    } else {
        // thrust axis along the heading; build the frame from the lateral axis
        let yc = Vector3::new(-psi.sin(), psi.cos(), 0.0);
        let b1 = yc.cross(&b3).normalize();
        (b1, b3.cross(&b1))
    };
    let r = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[b1, b2, b3]));
    Ok((UnitQuaternion::from_rotation_matrix(&r), -fnorm))
}

/// [`position_ndi`] that holds the last valid output through degenerate
/// demands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeReference {
    pub attitude: UnitQuaternion<f64>,
    pub fz: f64,
    /// The last call held the previous reference.
    pub held: bool,
}

impl AttitudeReference {
    pub fn new(attitude: UnitQuaternion<f64>) -> Self {
        Self {
            attitude,
            fz: -GRAVITY,
            held: false,
        }
    }

    pub fn update(&mut self, a_r: &Vector3<f64>, psi: f64) {
        match position_ndi(a_r, psi) {
            Ok((q, fz)) => {
                self.attitude = q;
                self.fz = fz;
                self.held = false;
            }
            Err(_) => self.held = true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterLimits {
    /// m/s²
    pub accel: f64,
    /// m/s
    pub velocity: f64,
}

impl Default for OuterLimits {
    fn default() -> Self {
        Self {
            accel: 2.0 * GRAVITY,
            velocity: 3.0,
        }
    }
}

fn clamp_norm(v: Vector3<f64>, max: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// Position loop to velocity reference, velocity loop to acceleration
/// reference. No integral action.
pub fn pid_accel(pos_err: &Vector3<f64>, velocity: &Vector3<f64>, gains: &Gains, limits: &OuterLimits) -> Vector3<f64> {
    let v_ref = clamp_norm(pos_err.component_mul(&gains.p), limits.velocity);
    clamp_norm((v_ref - velocity).component_mul(&gains.v), limits.accel)
}

/// Yaw angle of the body x axis projected on the horizontal plane.
pub fn heading_of(q: &UnitQuaternion<f64>) -> f64 {
    let x = q * Vector3::x();
    x.y.atan2(x.x)
}
