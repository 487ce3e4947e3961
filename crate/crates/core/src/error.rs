use thiserror::Error;

use crate::{capture, dataset, explain, features, model, tls};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error; each pipeline stage keeps its own enum.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Capture(#[from] capture::CaptureError),
    #[error(transparent)]
    Tls(#[from] tls::TlsError),
    #[error(transparent)]
    Features(#[from] features::FeatureError),
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Explain(#[from] explain::ExplainError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
