use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("graph is not strongly connected")]
    NotStronglyConnected,

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:e})")]
    NotHurwitz { abscissa: f64 },

    #[error("Riccati solve failed: {0}")]
    RiccatiFailed(String),

    #[error("T^T (L (x) I) T + M is not positive definite (lambda_min = {lambda_min:e})")]
    Lemma4Violated { lambda_min: f64 },

    /// No strictly feasible point found within the iteration budget. This is
    /// not a certificate of infeasibility.
    #[error("no feasible point found (best lambda_max = {best_lambda_max:e})")]
    Infeasible { best_lambda_max: f64 },

    #[error("bad pencil: {0}")]
    BadPencil(String),

    #[error("simulation diverged at t = {t}")]
    NonFinite { t: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
