use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid parameter range for `{0}`")]
    InvalidRange(&'static str),
    #[error("no hover-capable vehicle found in 1000 draws")]
    HoverInfeasible,
    #[error("invalid vehicle: {0}")]
    InvalidVehicle(String),
    #[error("invalid integration step {0} s")]
    InvalidStep(f64),
    #[error("invalid throw: {0}")]
    InvalidThrow(&'static str),
    #[error("non-finite simulator state")]
    NonFinite,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("cutoff {fc} Hz outside (0, {nyquist}) Hz")]
    InvalidCutoff { fc: f64, nyquist: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RlsError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input rejected")]
    NonFinite,
    #[error("invalid setting: {0}")]
    InvalidSetting(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdentError {
    #[error("motor {motor}: a + b = {sum} is not positive")]
    InvalidMotorFit { motor: usize, sum: f64 },
    #[error("motor {motor}: omega_max {value} rad/s outside [500, 20000]")]
    OmegaMaxGate { motor: usize, value: f64 },
    #[error("motor {motor}: tau {value} s outside [0.002, 0.2]")]
    TauGate { motor: usize, value: f64 },
    #[error("motor {motor}: thrust effectiveness {value} is not negative")]
    ThrustSignGate { motor: usize, value: f64 },
    #[error(transparent)]
    Rls(#[from] RlsError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("time constant {0} s outside [0.002, 0.2]")]
    TauOutOfRange(f64),
    #[error("damping ratio must be positive")]
    InvalidDamping,
    #[error("thrust demand too small to define an attitude")]
    DegenerateThrust,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
