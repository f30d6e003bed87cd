use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("M is not Hermitian (max residual {0:.3e})")]
    NotHermitian(f64),
    #[error("S is not unitary (max residual {0:.3e})")]
    NotUnitary(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("matrix is not symmetric (max residual {0:.3e})")]
    NotSymmetric(f64),
    #[error("singular matrix in {0}")]
    Singular(String),
    #[error("controllability matrix has rank {rank}, expected {expected}")]
    RankDeficient { rank: usize, expected: usize },
    #[error("unstable matrix in {what}: max real part of spectrum {max_re:.3e}")]
    Unstable { what: String, max_re: f64 },
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        what: String,
        iterations: usize,
        residual: f64,
    },
    #[error("Cholesky factorization failed (smallest pivot {pivot:.3e})")]
    Factorization { pivot: f64 },
    #[error("NaN detected at step {0}")]
    NanAtStep(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::NotHermitian(_)
                | Error::NotUnitary(_)
                | Error::Dimension(_)
                | Error::InvalidParameter(_)
                | Error::NotSymmetric(_)
                | Error::Json(_)
                | Error::Io(_)
        )
    }
}
