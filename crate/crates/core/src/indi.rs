//! Incremental nonlinear dynamic inversion of the identified model.
//!
//! The normalized actuator state is `u = ((ω - ω_idle) / ω_max)²`, so that
//! `ω² ≈ ω_max² u` and the steady ESC map becomes `√u = κδ + (1-κ)√δ`.

use nalgebra::{DMatrix, DVector, Matrix4, Vector3, Vector4};

use crate::filters::{butter2_design, DiffBank, FilterBank};
use crate::ident::ControlParams;
use crate::sim::SensorSample;

/// Rotor speed used in the effectiveness matrix when no idle speed is known.
pub const FALLBACK_MIN_ROTOR_SPEED: f64 = 300.0;

/// Smallest accepted `σ_min / σ_max` of the controlled effectiveness.
pub const MIN_CONDITION_RATIO: f64 = 1e-6;

/// Controlled pseudo-control: collective specific force and angular
/// acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PseudoControl {
    /// Body z specific force, m/s² (negative when thrusting).
    pub fz: f64,
    /// rad/s²
    pub rate_dot: Vector3<f64>,
}

impl PseudoControl {
    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.fz, self.rate_dot.x, self.rate_dot.y, self.rate_dot.z)
    }
}

/// ESC input `δ ∈ [0, 1]` that yields normalized actuator state `u`:
/// the non-negative root `s = √δ` of `κ s² + (1-κ) s - √u = 0`.
pub fn esc_invert(u: f64, kappa: f64) -> f64 {
    let c = u.clamp(0.0, 1.0).sqrt();
    let b = 1.0 - kappa;
    let disc = (b * b + 4.0 * kappa * c).max(0.0).sqrt();
    let s = if b >= 0.0 {
        // rationalized form, no cancellation as κ -> 0
        let den = b + disc;
        if den > 0.0 {
            2.0 * c / den
        } else {
            0.0
        }
    } else {
        (-b + disc) / (2.0 * kappa)
    };
    (s * s).clamp(0.0, 1.0)
}

/// Normalized actuator state `u` produced by ESC input `δ`.
pub fn esc_forward(delta: f64, kappa: f64) -> f64 {
    let d = delta.clamp(0.0, 1.0);
    let root = kappa * d + (1.0 - kappa) * d.sqrt();
    root * root
}

/// One step of the first-order actuator model on `u`.
pub fn lag_emulate(u0: f64, u: f64, dt: f64, tau: f64) -> f64 {
    u0 + (u - u0) * (1.0 - (-dt / tau).exp())
}

/// Steady rotor speed after a relative thrust increment `r = ΔT_s / T`
/// from speed `omega`.
pub fn steady_speed_exact(omega: f64, r: f64) -> f64 {
    omega * (1.0 + r).sqrt()
}

/// First-order binomial form of [`steady_speed_exact`], the approximation
/// that makes the inner loop linear in `Δu`.
pub fn steady_speed_linearized(omega: f64, r: f64) -> f64 {
    omega * (1.0 + 0.5 * r)
}

/// Rows `(f_z, ṗ, q̇, ṙ)` of `dν/du` around rotor speeds `omega0`.
pub fn effective_matrix(params: &ControlParams, omega0: &[f64; 4]) -> Matrix4<f64> {
    let mut g = Matrix4::zeros();
    for m in 0..4 {
        let wm2 = params.omega_max[m] * params.omega_max[m];
        let floor = if params.omega_idle[m] > 0.0 {
            params.omega_idle[m]
        } else {
            FALLBACK_MIN_ROTOR_SPEED
        };
        let w0 = omega0[m].max(floor);
        g[(0, m)] = params.b1k[(2, m)] * wm2;
        for r in 0..3 {
            g[(r + 1, m)] = params.b1k[(r + 3, m)] * wm2 + params.b2[(r, m)] * wm2 / (2.0 * w0 * params.tau[m]);
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Allocation {
    pub u: [f64; 4],
    pub saturated: [bool; 4],
    /// The effectiveness was ill-conditioned and `u` was held.
    pub degraded: bool,
}

fn condition_ratio(g: &DMatrix<f64>) -> f64 {
    let sv = g.clone().svd(false, false).singular_values;
    let max = sv.max();
    if max > 0.0 {
        sv.min() / max
    } else {
        0.0
    }
}

fn least_squares(g: &DMatrix<f64>, d: &DVector<f64>) -> Option<DVector<f64>> {
    let pinv = g.clone().pseudo_inverse(1e-12).ok()?;
    Some(pinv * d)
}

fn clamp_unit(u0: &[f64; 4], du: &DVector<f64>, cols: &[usize], u: &mut [f64; 4], sat: &mut [bool; 4]) {
    for (k, &m) in cols.iter().enumerate() {
        let raw = u0[m] + du[k];
        u[m] = raw.clamp(0.0, 1.0);
        sat[m] = !(0.0..=1.0).contains(&raw);
    }
}

/// Solve `G Δu = d` in the least-squares sense, clamp `u0 + Δu` to `[0, 1]`
/// and redistribute once over the unsaturated actuators.
pub fn allocate(g: &Matrix4<f64>, demand: &Vector4<f64>, u0: &[f64; 4], prev_u: &[f64; 4]) -> Allocation {
    let gd = DMatrix::from_iterator(4, 4, g.iter().copied());
    let d = DVector::from_iterator(4, demand.iter().copied());
    let hold = Allocation {
        u: *prev_u,
        saturated: [false; 4],
        degraded: true,
    };
    if !gd.iter().all(|v| v.is_finite()) || !d.iter().all(|v| v.is_finite()) {
        return hold;
    }
    if condition_ratio(&gd) < MIN_CONDITION_RATIO {
        return hold;
    }
    let Some(du) = least_squares(&gd, &d) else {
        return hold;
    };
    let mut u = [0.0; 4];
    let mut sat = [false; 4];
    clamp_unit(u0, &du, &[0, 1, 2, 3], &mut u, &mut sat);

    let free: Vec<usize> = (0..4).filter(|&m| !sat[m]).collect();
    if free.len() < 4 && !free.is_empty() {
        let mut residual = d.clone();
        for m in (0..4).filter(|&m| sat[m]) {
            residual -= gd.column(m) * (u[m] - u0[m]);
        }
        let gf = gd.select_columns(free.iter());
        if let Some(du_free) = least_squares(&gf, &residual) {
            let mut sat_free = [false; 4];
            clamp_unit(u0, &du_free, &free, &mut u, &mut sat_free);
            for &m in &free {
                sat[m] = sat_free[m];
            }
        }
    }
    Allocation {
        u,
        saturated: sat,
        degraded: false,
    }
}

/// Filtered signals the inner loop runs on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlMeasurements {
    /// Specific force at the centre of gravity, m/s².
    pub specific_force: Vector3<f64>,
    pub rates: Vector3<f64>,
    pub rate_dot: Vector3<f64>,
    pub rotor_speeds: [f64; 4],
    pub rotor_accels: [f64; 4],
}

/// 15 Hz measurement filters, run from the first tick so they are settled
/// at switchover.
#[derive(Debug, Clone)]
pub struct ControlFilters {
    specific_force: FilterBank<3>,
    gyro: DiffBank<3>,
    rotor: DiffBank<4>,
    imu_offset: Vector3<f64>,
}

impl ControlFilters {
    pub fn new(cutoff_hz: f64, sample_rate_hz: f64, imu_offset: Vector3<f64>) -> Self {
        let proto = butter2_design(cutoff_hz, sample_rate_hz).expect("control cutoff");
        let dt = 1.0 / sample_rate_hz;
        Self {
            specific_force: FilterBank::new(proto),
            gyro: DiffBank::new(proto, dt),
            rotor: DiffBank::new(proto, dt),
            imu_offset,
        }
    }

    pub fn step(&mut self, sample: &SensorSample) -> ControlMeasurements {
        let f = sample.specific_force;
        let f = Vector3::from(self.specific_force.step(&[f.x, f.y, f.z]));
        let (w, wd) = self.gyro.step(&[sample.gyro.x, sample.gyro.y, sample.gyro.z]);
        let (rotor_speeds, rotor_accels) = self.rotor.step(&sample.rotor_speeds);
        let (w, wd) = (Vector3::from(w), Vector3::from(wd));
        let r = self.imu_offset;
        ControlMeasurements {
            specific_force: f - wd.cross(&r) - w.cross(&w.cross(&r)),
            rates: w,
            rate_dot: wd,
            rotor_speeds,
            rotor_accels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOutput {
    pub esc: [f64; 4],
    pub u: [f64; 4],
    pub saturated: [bool; 4],
    pub degraded: bool,
}

/// Inner INDI loop with emulated actuator lag.
#[derive(Debug, Clone)]
pub struct InnerLoop {
    params: ControlParams,
    dt: f64,
    u_lag: [f64; 4],
    u_lag_filter: FilterBank<4>,
    u_prev: [f64; 4],
}

impl InnerLoop {
    /// Start at the actuator state implied by the current filtered rotor
    /// speeds.
    pub fn new(params: ControlParams, cutoff_hz: f64, sample_rate_hz: f64, meas: &ControlMeasurements) -> Self {
        let proto = butter2_design(cutoff_hz, sample_rate_hz).expect("control cutoff");
        let u: [f64; 4] = std::array::from_fn(|m| {
            let s = (meas.rotor_speeds[m] - params.omega_idle[m]) / params.omega_max[m];
            let s = if s.is_finite() { s.clamp(0.0, 1.0) } else { 0.0 };
            s * s
        });
        let mut u_lag_filter = FilterBank::new(proto);
        u_lag_filter.prime(&u);
        Self {
            params,
            dt: 1.0 / sample_rate_hz,
            u_lag: u,
            u_lag_filter,
            u_prev: u,
        }
    }

    pub fn params(&self) -> &ControlParams {
        &self.params
    }

    /// Emulated actuator state.
    pub fn actuator_state(&self) -> [f64; 4] {
        self.u_lag
    }

    pub fn step(&mut self, meas: &ControlMeasurements, reference: &PseudoControl) -> InnerOutput {
        let p = &self.params;
        let u0 = self.u_lag_filter.step(&self.u_lag);
        let g = effective_matrix(p, &meas.rotor_speeds);
        let nu0 = Vector4::new(meas.specific_force.z, meas.rate_dot.x, meas.rate_dot.y, meas.rate_dot.z);
        let wd0 = Vector4::from(meas.rotor_accels);
        let b2_wd = p.b2 * wd0;
        let demand = reference.as_vector() - nu0 + Vector4::new(0.0, b2_wd.x, b2_wd.y, b2_wd.z);
        let alloc = allocate(&g, &demand, &u0, &self.u_prev);
        for m in 0..4 {
            self.u_lag[m] = lag_emulate(self.u_lag[m], alloc.u[m], self.dt, p.tau[m]);
        }
        self.u_prev = alloc.u;
        InnerOutput {
            esc: std::array::from_fn(|m| esc_invert(alloc.u[m], p.kappa[m])),
            u: alloc.u,
            saturated: alloc.saturated,
            degraded: alloc.degraded,
        }
    }
}
