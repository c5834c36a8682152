use thiserror::Error;

/// Error type shared by every layer of the crate.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A caller violated an API contract (bad argument, wrong call order).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A model was asked for a capability it does not have.
    #[error("model '{model}' does not support {capability}")]
    Unsupported { model: String, capability: String },

    /// A computation produced a non-finite or otherwise unusable value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Run configuration is malformed or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// Checkpoint or data file is malformed.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Nn(#[from] boed_nn::NnError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn contract(msg: impl Into<String>) -> Self {
        CoreError::Contract(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CoreError::Numeric(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        CoreError::Format(msg.into())
    }
}
