use thiserror::Error;

/// Errors raised by the control, model, solver and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid ladder: {0}")]
    InvalidLadder(String),
    #[error("invalid volume grid: {0}")]
    InvalidVolumeGrid(String),
    #[error("pending-order capacity exceeded (K = {max_pending})")]
    CapacityExceeded { max_pending: usize },
    #[error("pending-volume cap exceeded: {total} > {cap}")]
    VolumeCapExceeded { total: f64, cap: f64 },
    #[error("order size {size} outside [-{bound}, {bound}]")]
    SizeOutOfBounds { size: f64, bound: f64 },
    #[error("level {level} out of range for a ladder with {levels} levels")]
    LevelOutOfRange { level: usize, levels: usize },
    #[error("no pending orders at level {0}")]
    NoPendingAtLevel(usize),
    #[error("config not in the enumerated configuration space")]
    UnknownConfig,
    #[error("price must be positive, got {0}")]
    NonPositivePrice(f64),
    #[error("trade of {xi} would drain the pool (limit {limit})")]
    PoolDrain { xi: f64, limit: f64 },
    #[error("invalid market parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("time step {dt} violates the stability bound {bound}")]
    StabilityViolation { dt: f64, bound: f64 },
    #[error("value {value} at t-index {t_index} exceeds the quadratic growth envelope {envelope}")]
    GrowthViolation {
        t_index: usize,
        value: f64,
        envelope: f64,
    },
    #[error("non-finite value produced at t-index {0}")]
    NonFinite(usize),
    #[error("no admissible impulse from this configuration")]
    NoAdmissibleImpulse,
    #[error("requested point is off the grid: {0}")]
    OffGrid(String),
    #[error("time slice {0} was not retained by the solve")]
    SliceNotRetained(usize),
    #[error("invalid simulation setup: {0}")]
    InvalidSim(String),
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("config error in `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidLadder(_) => "invalid_ladder",
            Error::InvalidVolumeGrid(_) => "invalid_volume_grid",
            Error::CapacityExceeded { .. } => "capacity_exceeded",
            Error::VolumeCapExceeded { .. } => "volume_cap_exceeded",
            Error::SizeOutOfBounds { .. } => "size_out_of_bounds",
            Error::LevelOutOfRange { .. } => "level_out_of_range",
            Error::NoPendingAtLevel(_) => "no_pending_at_level",
            Error::UnknownConfig => "unknown_config",
            Error::NonPositivePrice(_) => "non_positive_price",
            Error::PoolDrain { .. } => "pool_drain",
            Error::InvalidParam { .. } => "invalid_param",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::StabilityViolation { .. } => "stability_violation",
            Error::GrowthViolation { .. } => "growth_violation",
            Error::NonFinite(_) => "non_finite",
            Error::NoAdmissibleImpulse => "no_admissible_impulse",
            Error::OffGrid(_) => "off_grid",
            Error::SliceNotRetained(_) => "slice_not_retained",
            Error::InvalidSim(_) => "invalid_sim",
            Error::Artifact(_) => "artifact",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for numerical
    /// failures, 4 for missing or mismatched artifacts.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidLadder(_)
            | Error::InvalidVolumeGrid(_)
            | Error::InvalidParam { .. }
            | Error::InvalidGrid(_)
            | Error::InvalidSim(_)
            | Error::OffGrid(_)
            | Error::LevelOutOfRange { .. }
            | Error::SizeOutOfBounds { .. }
            | Error::Config { .. } => 2,
            Error::Artifact(_) | Error::MissingArtifact(_) | Error::Io(_) => 4,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
