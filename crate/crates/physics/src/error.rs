use thiserror::Error;

pub type Result<T, E = PhysicsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PhysicsError {
    #[error("value {0} outside the domain [0, 1]")]
    Domain(f64),

    #[error("degenerate deformation gradient (det = {det})")]
    SingularDecomposition { det: f64 },

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Core(#[from] sandsim_core::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
