//! Per-motor excitation sequence with a gyro-saturation guard.
//!
//! Each motor in turn gets a step, a pause, a second step and a falling ramp
//! while the other three are held at zero. The schedule is clocked in ticks
//! so phase boundaries do not depend on accumulated floating-point time.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitationConfig {
    pub amplitude: f64,
    /// s
    pub step1: f64,
    pub gap: f64,
    pub step2: f64,
    pub ramp: f64,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            step1: 0.035,
            gap: 0.015,
            step2: 0.025,
            ramp: 0.0375,
        }
    }
}

impl ExcitationConfig {
    pub fn slot_duration(&self) -> f64 {
        self.step1 + self.gap + self.step2 + self.ramp
    }

    pub fn total_duration(&self) -> f64 {
        4.0 * self.slot_duration()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Step1,
    Gap,
    Step2,
    Ramp,
    Done,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Step1 => "step1",
            Phase::Gap => "gap",
            Phase::Step2 => "step2",
            Phase::Ramp => "ramp",
            Phase::Done => "done",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardAction {
    Continue,
    AbortMotor,
}

/// Phase lengths in ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Ticks {
    step1: usize,
    gap: usize,
    step2: usize,
    ramp: usize,
}

impl Ticks {
    fn slot(&self) -> usize {
        self.step1 + self.gap + self.step2 + self.ramp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationState {
    cfg: ExcitationConfig,
    ticks: Ticks,
    dt: f64,
    gyro_limit: f64,
    pub motor_index: usize,
    pub phase: Phase,
    /// Ticks spent in the current phase.
    pub phase_tick: usize,
    pub omega_entry: Vector3<f64>,
    pub margin: Vector3<f64>,
    pub n_left: usize,
    pub aborted: [bool; 4],
}

/// Divisor applied to the entry margin: `2 max(1, n_l)`. The factor 2
/// leaves room for the rate a motor keeps adding while it spins down after
/// an abort.
pub fn guard_divisor(n_left: usize) -> f64 {
    2.0 * n_left.max(1) as f64
}

fn to_ticks(duration: f64, dt: f64) -> usize {
    (duration / dt).round().max(0.0) as usize
}

impl ExcitationState {
    /// Enter motor 0 with the current gyro reading.
    pub fn new(cfg: ExcitationConfig, dt: f64, gyro_limit: f64, gyro: &Vector3<f64>) -> Self {
        assert!(dt > 0.0, "dt must be positive");
        let ticks = Ticks {
            step1: to_ticks(cfg.step1, dt),
            gap: to_ticks(cfg.gap, dt),
            step2: to_ticks(cfg.step2, dt),
            ramp: to_ticks(cfg.ramp, dt),
        };
        let mut s = Self {
            cfg,
            ticks,
            dt,
            gyro_limit,
            motor_index: 0,
            phase: Phase::Step1,
            phase_tick: 0,
            omega_entry: Vector3::zeros(),
            margin: Vector3::zeros(),
            n_left: 3,
            aborted: [false; 4],
        };
        s.enter_motor(0, gyro);
        s.skip_empty_phases();
        s
    }

    fn enter_motor(&mut self, motor: usize, gyro: &Vector3<f64>) {
        self.motor_index = motor;
        self.n_left = 3 - motor;
        self.omega_entry = *gyro;
        self.margin = gyro.map(|w| (self.gyro_limit - w.abs()).max(0.0));
    }

    fn phase_len(&self, phase: Phase) -> usize {
        match phase {
            Phase::Step1 => self.ticks.step1,
            Phase::Gap => self.ticks.gap,
            Phase::Step2 => self.ticks.step2,
            Phase::Ramp => self.ticks.ramp,
            Phase::Done => usize::MAX,
        }
    }

    fn skip_empty_phases(&mut self) {
        while self.phase != Phase::Done && self.phase_tick >= self.phase_len(self.phase) {
            self.phase_tick = 0;
            self.phase = match self.phase {
                Phase::Step1 => Phase::Gap,
                Phase::Gap => Phase::Step2,
                Phase::Step2 => Phase::Ramp,
                Phase::Ramp | Phase::Done => Phase::Done,
            };
            if self.phase == Phase::Done && self.motor_index < 3 {
                self.phase = Phase::Step1;
                self.motor_index += 1;
                // entry values are set by `advance`, which knows the gyro
            }
        }
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    /// Seconds into the current phase.
    pub fn phase_clock(&self) -> f64 {
        self.phase_tick as f64 * self.dt
    }

    /// Total excitation length in ticks.
    pub fn total_ticks(&self) -> usize {
        4 * self.ticks.slot()
    }

    /// Command of the active motor at `t_in_phase` seconds into `phase`.
    pub fn phase_command(&self, phase: Phase, t_in_phase: f64) -> f64 {
        let a = self.cfg.amplitude.clamp(0.0, 1.0);
        match phase {
            Phase::Step1 | Phase::Step2 => a,
            Phase::Gap | Phase::Done => 0.0,
            Phase::Ramp => {
                if self.cfg.ramp > 0.0 {
                    (a * (1.0 - t_in_phase / self.cfg.ramp)).clamp(0.0, a)
                } else {
                    0.0
                }
            }
        }
    }

    /// ESC commands for the current tick.
    pub fn excitation_command(&self) -> [f64; 4] {
        let mut cmd = [0.0; 4];
        if self.phase == Phase::Done || self.aborted[self.motor_index] {
            return cmd;
        }
        cmd[self.motor_index] = self.phase_command(self.phase, self.phase_clock());
        cmd
    }

    /// Threshold on `|gyro - Ω_e|` per axis.
    pub fn threshold(&self) -> Vector3<f64> {
        self.margin / guard_divisor(self.n_left)
    }

    pub fn guard_check(&self, gyro: &Vector3<f64>) -> GuardAction {
        let th = self.threshold();
        for i in 0..3 {
            if (gyro[i] - self.omega_entry[i]).abs() >= th[i] {
                return GuardAction::AbortMotor;
            }
        }
        GuardAction::Continue
    }

    /// Move one tick forward. `gyro` is the reading at the new tick; it
    /// becomes `Ω_e` when a new motor is entered, otherwise it is checked
    /// against the guard of the active motor.
    pub fn advance(&mut self, gyro: &Vector3<f64>) {
        if self.phase == Phase::Done {
            return;
        }
        let motor = self.motor_index;
        self.phase_tick += 1;
        self.skip_empty_phases();
        if self.phase == Phase::Done {
            return;
        }
        if self.motor_index != motor {
            self.enter_motor(self.motor_index, gyro);
        } else if !self.aborted[motor] && self.guard_check(gyro) == GuardAction::AbortMotor {
            self.aborted[motor] = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::DEFAULT_GYRO_LIMIT;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const DT: f64 = 0.0005;

    fn fresh() -> ExcitationState {
        ExcitationState::new(ExcitationConfig::default(), DT, DEFAULT_GYRO_LIMIT, &Vector3::zeros())
    }

    #[test]
    fn first_tick_excites_motor_one() {
        assert_eq!(fresh().excitation_command(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn mid_ramp_is_half() {
        let s = fresh();
        assert_relative_eq!(s.phase_command(Phase::Ramp, 0.0375 / 2.0), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn schedule_lasts_450_ms() {
        let cfg = ExcitationConfig::default();
        assert_relative_eq!(cfg.total_duration(), 0.45, epsilon = 1e-12);
        let mut s = fresh();
        assert_eq!(s.total_ticks(), 900);
        let mut ticks = 0;
        while !s.is_done() {
            s.advance(&Vector3::zeros());
            ticks += 1;
        }
        assert_eq!(ticks, 900);
    }

    #[test]
    fn command_profile_of_one_slot() {
        let mut s = fresh();
        let mut profile = Vec::new();
        for _ in 0..225 {
            profile.push(s.excitation_command());
            s.advance(&Vector3::zeros());
        }
        assert_eq!(s.motor_index, 1);
        assert!(profile[..70].iter().all(|c| c[0] == 1.0));
        assert!(profile[70..100].iter().all(|c| c[0] == 0.0));
        assert!(profile[100..150].iter().all(|c| c[0] == 1.0));
        assert_eq!(profile[150][0], 1.0);
        assert!(profile[150..].windows(2).all(|w| w[1][0] < w[0][0]));
        assert!(profile.iter().all(|c| c[1..] == [0.0; 3]));
    }

    #[test]
    fn guard_threshold_arithmetic() {
        let s = ExcitationState::new(ExcitationConfig::default(), DT, 34.907, &Vector3::new(10.0, 0.0, 0.0));
        assert_eq!(s.n_left, 3);
        // 10 + 24.907 / (2 * 3)
        assert_relative_eq!(s.omega_entry.x + s.threshold().x, 14.151, epsilon = 1e-3);
        assert_eq!(s.guard_check(&Vector3::new(10.0, 0.0, 0.0)), GuardAction::Continue);
        assert_eq!(s.guard_check(&Vector3::new(14.15, 0.0, 0.0)), GuardAction::Continue);
        assert_eq!(s.guard_check(&Vector3::new(14.16, 0.0, 0.0)), GuardAction::AbortMotor);
    }

    #[test]
    fn last_motor_keeps_a_finite_guard() {
        assert_eq!(guard_divisor(3), 6.0);
        assert_eq!(guard_divisor(1), 2.0);
        assert_eq!(guard_divisor(0), 2.0);
    }

    #[test]
    fn reading_at_threshold_aborts() {
        let s = fresh();
        let th = s.threshold();
        assert_eq!(s.guard_check(&Vector3::new(0.0, th.y, 0.0)), GuardAction::AbortMotor);
        assert_eq!(s.guard_check(&Vector3::zeros()), GuardAction::Continue);
    }

    #[test]
    fn n_left_counts_down() {
        let mut s = fresh();
        let mut seen = vec![s.n_left];
        while !s.is_done() {
            s.advance(&Vector3::zeros());
            if !s.is_done() && *seen.last().unwrap() != s.n_left {
                seen.push(s.n_left);
            }
        }
        assert_eq!(seen, vec![3, 2, 1, 0]);
    }

    #[test]
    fn abort_is_per_motor() {
        let mut s = fresh();
        // run into motor 2's slot, then trip its guard
        while s.motor_index < 1 {
            s.advance(&Vector3::zeros());
        }
        s.advance(&Vector3::new(30.0, 0.0, 0.0));
        assert!(s.aborted[1]);
        assert_eq!(s.excitation_command(), [0.0; 4]);
        while s.motor_index < 2 {
            s.advance(&Vector3::new(30.0, 0.0, 0.0));
        }
        assert_eq!(s.excitation_command(), [0.0, 0.0, 1.0, 0.0]);
        assert_eq!(s.omega_entry.x, 30.0);
        assert_eq!(s.aborted, [false, true, false, false]);
    }

    #[test]
    fn zero_margin_aborts_immediately() {
        let mut s = ExcitationState::new(ExcitationConfig::default(), DT, 1.0, &Vector3::new(2.0, 0.0, 0.0));
        assert_eq!(s.margin.x, 0.0);
        s.advance(&Vector3::new(2.0, 0.0, 0.0));
        assert!(s.aborted[0]);
    }

    proptest! {
        #[test]
        fn commands_in_unit_interval_and_deterministic(
            gyros in prop::collection::vec(prop::array::uniform3(-40.0f64..40.0), 900),
        ) {
            let run = || {
                let mut s = fresh();
                let mut out = Vec::new();
                for g in &gyros {
                    let c = s.excitation_command();
                    out.push(c);
                    s.advance(&Vector3::from(*g));
                    prop_assert!(s.margin.iter().all(|m| *m >= 0.0));
                    if !s.is_done() {
                        prop_assert!(s.phase_clock() <= 0.0375 + 1e-12);
                    }
                }
                prop_assert!(s.is_done());
                Ok(out)
            };
            let a = run()?;
            let b = run()?;
            prop_assert!(a.iter().flatten().all(|c| (0.0..=1.0).contains(c)));
            prop_assert_eq!(a, b);
        }
    }
}
