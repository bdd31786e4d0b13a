use thiserror::Error;

/// Which law of a user a validation failure refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LawRole {
    Arrival,
    Window,
}

impl std::fmt::Display for LawRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LawRole::Arrival => f.write_str("arrival"),
            LawRole::Window => f.write_str("window"),
        }
    }
}

#[derive(Debug, Error)]
pub enum AlohaError {
    #[error("invalid pmf: {0}")]
    InvalidPmf(String),

    #[error("invalid distribution parameter: {0}")]
    InvalidParameter(String),

    #[error("user {user}: {role} law has P(X = 1) = 0, the chain would not be irreducible")]
    ZeroProbOfOne { user: usize, role: LawRole },

    #[error("network needs at least one user")]
    NoUsers,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("offered rate of user {user} is zero (some other user attempts with probability 1)")]
    ZeroOfferedRate { user: usize },

    #[error("value out of domain: {0}")]
    DomainError(String),

    #[error("return-time statistics need at least one outcome")]
    EmptyInput,

    #[error("window laws must have support in {{0, 1}} for this operation (user {user})")]
    NotSinglePacket { user: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("initial state is the origin; escape is measured from a nonempty state")]
    InitIsOrigin,

    #[error("truncated state space has {states} states, limit is {limit}")]
    StateSpaceTooLarge { states: u64, limit: u64 },

    #[error("hitting-time system is singular: {0}")]
    SingularSystem(String),

    #[error(
        "truncation dominates the answer (boundary occupancy {boundary_occupancy:.3e}, \
         clamped mass per cycle {clamped_per_cycle:.3e}, threshold {threshold:.0e})"
    )]
    TruncationDominated {
        boundary_occupancy: f64,
        clamped_per_cycle: f64,
        threshold: f64,
    },

    #[error("iterative solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("schema error at {path}: {message}")]
    SchemaError { path: String, message: String },

    #[error("grid has {points} points, limit is {limit}")]
    GridTooLarge { points: usize, limit: usize },

    #[error("grid is empty")]
    EmptyGrid,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AlohaError {
    /// True for errors caused by invalid input, as opposed to failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            AlohaError::InvalidPmf(_)
                | AlohaError::InvalidParameter(_)
                | AlohaError::ZeroProbOfOne { .. }
                | AlohaError::NoUsers
                | AlohaError::DimensionMismatch { .. }
                | AlohaError::DomainError(_)
                | AlohaError::NotSinglePacket { .. }
                | AlohaError::InvalidArgument(_)
                | AlohaError::InitIsOrigin
                | AlohaError::SchemaError { .. }
                | AlohaError::GridTooLarge { .. }
                | AlohaError::EmptyGrid
                | AlohaError::StateSpaceTooLarge { .. }
        )
    }
}

pub type Result<T, E = AlohaError> = std::result::Result<T, E>;
