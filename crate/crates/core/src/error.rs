use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("no heading-delta bucket for speed {speed} m/s, dt {dt} s")]
    MissingBucket { speed: f64, dt: f64 },
    #[error("bucket (speed {speed} m/s, dt {dt} s) has fewer than 2 distinct rudder values")]
    DegenerateBucket { speed: f64, dt: f64 },
    #[error("rudder angle {0} rad outside [-0.24, 0.24]")]
    RudderDomain(f64),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("rank-deficient trilateration: {0}")]
    RankDeficient(String),
    #[error("spawn infeasible after {attempts} attempts ({n_agents} agents, {n_targets} targets, separation [{min_sep}, {max_sep}] m)")]
    Spawn {
        attempts: usize,
        n_agents: usize,
        n_targets: usize,
        min_sep: f64,
        max_sep: f64,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::Config { field: field.into(), reason: reason.into() }
    }
}
