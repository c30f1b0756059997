//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("integration blew up to non-finite values at step {step}")]
    Integration { step: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("feature {index} is constant (max == min); cannot normalize")]
    ConstantFeature { index: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("not enough trajectories ({got}) to split into {parts} parts")]
    TooFewTrajectories { got: usize, parts: usize },

    #[error("Gram matrix is numerically singular beyond regularization")]
    SingularGram,

    #[error("eigenvalue computation failed: {0}")]
    EigenFailure(String),

    #[error(
        "spectral radius {rho:.6} >= 1: the lifted transition matrix must be strictly stable \
         for an invariant set to exist"
    )]
    Unstable { rho: f64 },

    #[error(
        "no contraction exponent s <= {s_max} reaches alpha <= {alpha_target}; \
         increase s_max or alpha_target"
    )]
    SMaxExceeded { s_max: usize, alpha_target: f64 },

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("unsupported decoder architecture: {0}")]
    UnsupportedArchitecture(String),

    #[error("missing artifact for stage `{stage}`: {path} (run `{stage}` first)")]
    MissingArtifact { stage: String, path: PathBuf },

    #[error(
        "stale artifact: {artifact} was not produced from the current {input}; \
         rerun `{stage}` (or pass --force)"
    )]
    StaleArtifact {
        artifact: String,
        input: String,
        stage: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code contract: 2 validation, 3 numerical, 4 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. }
            | Error::Dimension { .. }
            | Error::InvalidConfig(_)
            | Error::ConstantFeature { .. }
            | Error::EmptyDataset
            | Error::TooFewTrajectories { .. }
            | Error::UnsupportedArchitecture(_)
            | Error::StaleArtifact { .. } => 2,
            Error::Integration { .. }
            | Error::SingularGram
            | Error::EigenFailure(_)
            | Error::Unstable { .. }
            | Error::SMaxExceeded { .. }
            | Error::TrainingDiverged { .. } => 3,
            Error::MissingArtifact { .. } | Error::Io { .. } | Error::Json { .. } => 4,
        }
    }
}
