//! Per-tick CSV log.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::excitation::ExcitationState;
use crate::ident::{ControlParams, PARAM_COUNT};
use crate::indi::{ControlMeasurements, PseudoControl};
use crate::sim::{RigidBodyState, SensorSample};

pub const TICK_LOG_VERSION: &str = "# quadlearn-tick-log v1";

/// Everything recorded for one tick.
pub struct TickRow<'a> {
    pub time: f64,
    pub phase: &'static str,
    pub excitation: Option<&'a ExcitationState>,
    pub state: &'a RigidBodyState,
    pub sample: &'a SensorSample,
    pub cmd: &'a [f64; 4],
    pub u: &'a [f64; 4],
    pub nu_ref: &'a PseudoControl,
    pub meas: &'a ControlMeasurements,
    /// rad
    pub attitude_error: f64,
    /// m
    pub position_error: f64,
    /// Written every 40th tick, empty cells otherwise.
    pub theta: Option<&'a ControlParams>,
}

pub fn header() -> String {
    let mut cols: Vec<String> = ["time", "phase", "exc_phase", "exc_motor", "exc_aborted"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for c in [
        "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "wx", "wy", "wz", "gyro_x", "gyro_y", "gyro_z",
        "f_x", "f_y", "f_z", "rpm_1", "rpm_2", "rpm_3", "rpm_4", "delta_1", "delta_2", "delta_3", "delta_4", "u_1",
        "u_2", "u_3", "u_4", "nur_fx", "nur_fy", "nur_fz", "nur_p", "nur_q", "nur_r", "nu0_fx", "nu0_fy", "nu0_fz",
        "nu0_p", "nu0_q", "nu0_r", "att_err", "pos_err",
    ] {
        cols.push(c.to_string());
    }
    for i in 0..PARAM_COUNT {
        cols.push(format!("theta_{i}"));
    }
    cols.join(",")
}

pub struct TickLog<W: Write> {
    out: W,
    line: String,
}

impl<W: Write> TickLog<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "{TICK_LOG_VERSION}")?;
        writeln!(out, "{}", header())?;
        Ok(Self {
            out,
            line: String::with_capacity(2048),
        })
    }

    pub fn write_tick(&mut self, r: &TickRow<'_>) -> io::Result<()> {
        let l = &mut self.line;
        l.clear();
        let (exc_phase, exc_motor, exc_aborted) = match r.excitation {
            Some(e) => (
                e.phase.as_str(),
                e.motor_index as i64,
                e.aborted
                    .iter()
                    .enumerate()
                    .fold(0u8, |m, (i, a)| m | ((*a as u8) << i)),
            ),
            None => ("", -1, 0),
        };
        let _ = write!(
            l,
            "{:.4},{},{},{},{}",
            r.time, r.phase, exc_phase, exc_motor, exc_aborted
        );
        let s = r.state;
        let q = s.attitude.quaternion();
        let mut vals: Vec<f64> = Vec::with_capacity(60);
        vals.extend(s.position.iter());
        vals.extend(s.velocity.iter());
        vals.extend([q.w, q.i, q.j, q.k]);
        vals.extend(s.omega_body.iter());
        vals.extend(r.sample.gyro.iter());
        vals.extend(r.sample.specific_force.iter());
        vals.extend(r.sample.rotor_speeds);
        vals.extend(r.cmd);
        vals.extend(r.u);
        vals.extend([0.0, 0.0, r.nu_ref.fz]);
        vals.extend(r.nu_ref.rate_dot.iter());
        vals.extend(r.meas.specific_force.iter());
        vals.extend(r.meas.rate_dot.iter());
        vals.push(r.attitude_error);
        vals.push(r.position_error);
        for v in vals {
            let _ = write!(l, ",{v:.6e}");
        }
        match r.theta {
            Some(t) => {
                for v in t.to_array() {
                    let _ = write!(l, ",{v:.6e}");
                }
            }
            None => l.push_str(&",".repeat(PARAM_COUNT)),
        }
        l.push('\n');
        self.out.write_all(l.as_bytes())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}
