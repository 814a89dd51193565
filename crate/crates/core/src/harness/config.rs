use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;
use crate::estimation::{FixConfig, ObserverGains};
use crate::excitation::ExcitationConfig;
use crate::ident::IdentScales;
use crate::outer::{OuterLimits, DEFAULT_ZETAS};
use crate::sim::{ParamRanges, SensorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReleaseConfig {
    /// m/s²
    pub threshold: f64,
    /// s
    pub duration: f64,
}

impl Default for ReleaseConfig {
    fn default() -> Self {
        Self {
            threshold: 2.0,
            duration: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuccessConfig {
    /// s after switchover
    pub window: f64,
    /// deg
    pub max_tilt: f64,
    /// rad/s
    pub max_rate: f64,
}

impl Default for SuccessConfig {
    fn default() -> Self {
        Self {
            window: 5.0,
            max_tilt: 25.0,
            max_rate: 1.0,
        }
    }
}

/// Everything that defines an episode except its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Hz
    pub sample_rate: f64,
    /// Apex height above the release point, m.
    pub throw_height: f64,
    /// Altitude of the release point, m.
    pub release_altitude: f64,
    /// Upper bound of the initial body rate, rad/s.
    pub omega0_max: f64,
    /// Time in the hand before release, s.
    pub held_duration: f64,
    /// From the estimated release instant to excitation start, s.
    pub delay_after_release: f64,
    /// Inertial, z down, m.
    pub setpoint: [f64; 3],
    /// Attitude error below which recovery hands over to position control, deg.
    pub position_handover: f64,
    /// Hz
    pub control_cutoff: f64,
    /// Hz
    pub ident_cutoff: f64,
    /// Feed the true attitude to the controller instead of the estimate.
    pub oracle_attitude: bool,
    /// Add the finite-difference derivative of the rate reference to the
    /// angular acceleration demand. Off by default.
    pub rate_feedforward: bool,
    /// Write a per-tick CSV for each episode.
    pub tick_log: bool,
    pub zetas: [f64; 4],
    pub release: ReleaseConfig,
    pub success: SuccessConfig,
    pub sensors: SensorConfig,
    pub fixes: FixConfig,
    pub observer: ObserverGains,
    pub excitation: ExcitationConfig,
    pub ident_scales: IdentScales,
    pub limits: OuterLimits,
    pub ranges: ParamRanges,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            sample_rate: 2000.0,
            throw_height: 4.0,
            release_altitude: 1.0,
            omega0_max: 10.0,
            held_duration: 0.15,
            delay_after_release: 0.45,
            setpoint: [0.0, 0.0, -1.5],
            position_handover: 30.0,
            control_cutoff: 15.0,
            ident_cutoff: 20.0,
            oracle_attitude: false,
            rate_feedforward: false,
            tick_log: false,
            zetas: DEFAULT_ZETAS,
            release: ReleaseConfig::default(),
            success: SuccessConfig::default(),
            sensors: SensorConfig::default(),
            fixes: FixConfig::default(),
            observer: ObserverGains::default(),
            excitation: ExcitationConfig::default(),
            ident_scales: IdentScales::default(),
            limits: OuterLimits::default(),
            ranges: ParamRanges::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let positive = [
            ("sample_rate", self.sample_rate),
            ("throw_height", self.throw_height),
            ("held_duration", self.held_duration),
            ("delay_after_release", self.delay_after_release),
            ("release.duration", self.release.duration),
            ("release.threshold", self.release.threshold),
            ("success.window", self.success.window),
            ("control_cutoff", self.control_cutoff),
            ("ident_cutoff", self.ident_cutoff),
            ("excitation.step1", self.excitation.step1),
            ("excitation.step2", self.excitation.step2),
            ("excitation.ramp", self.excitation.ramp),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HarnessError::Config(format!("`{name}` must be positive, got {v}")));
            }
        }
        if !(self.omega0_max >= 0.0 && self.omega0_max <= 10.0) {
            return Err(HarnessError::Config("`omega0_max` must lie in [0, 10] rad/s".into()));
        }
        if self.excitation.gap < 0.0 {
            return Err(HarnessError::Config("`excitation.gap` must be non-negative".into()));
        }
        if self.dt() > 0.005 {
            return Err(HarnessError::Config("`sample_rate` must be at least 200 Hz".into()));
        }
        for fc in [self.control_cutoff, self.ident_cutoff] {
            if fc >= self.sample_rate / 2.0 {
                return Err(HarnessError::Config(format!("cutoff {fc} Hz at or above Nyquist")));
            }
        }
        self.ranges.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
