use thiserror::Error;

/// Errors raised by the reduction toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("system is not asymptotically stable (spectral abscissa {abscissa:e})")]
    Unstable { abscissa: f64 },

    #[error("reduced model is not asymptotically stable (spectral abscissa {abscissa:e})")]
    UnstableReduced { abscissa: f64 },

    #[error("spectral overlap in Sylvester equation (pivot {pivot:e} below {threshold:e})")]
    SpectralOverlap { pivot: f64, threshold: f64 },

    #[error("{what}: relative residual {relative:e} exceeds {limit:e}")]
    Residual { what: &'static str, relative: f64, limit: f64 },

    #[error("real Schur decomposition did not converge")]
    SchurFailed,

    #[error("projection failure: cond(W^T V) = {cond:e}")]
    Projection { cond: f64 },

    #[error("singular matrix {what} (condition estimate {cond:e})")]
    Singular { what: &'static str, cond: f64 },

    #[error("rank deficient basis: numerical rank {rank} < {wanted}")]
    RankDeficient { rank: usize, wanted: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("non-finite values during {0}")]
    NonFinite(&'static str),

    #[error("matrix market: {0}")]
    MatrixMarket(String),

    #[error("bundle: {0}")]
    Bundle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
