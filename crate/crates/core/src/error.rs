use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("structural mismatch: {0}")]
    Structural(String),
    #[error("stability: dt = {dt:e} exceeds dt_max = {dt_max:e}")]
    Stability { dt: f64, dt_max: f64 },
    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("degenerate normal equations: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
