use thiserror::Error;

/// Errors raised by the analyses in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("set is not regular: {0}")]
    NotRegular(String),

    #[error("dyadic grid property ({property}) violated at cube {cube}: {detail}")]
    GridViolation {
        property: &'static str,
        cube: usize,
        detail: String,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("no coronization: {0}")]
    NoCorona(String),

    #[error("certificate clause {clause} failed at cube {cube}: {detail}")]
    Certificate {
        clause: String,
        cube: usize,
        detail: String,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True when the error reports a failed numeric check rather than bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NotRegular(_)
            | Error::GridViolation { .. }
            | Error::Contract(_)
            | Error::NoCorona(_)
            | Error::Certificate { .. } => true,
            Error::Stage { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
