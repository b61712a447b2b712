use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix exponential overflow: {0}")]
    ExpmOverflow(String),

    #[error("singular innovation covariance: {0}")]
    SingularInnovation(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("divergence at step {step} (t = {t}): {detail}")]
    Divergence { step: usize, t: f64, detail: String },

    #[error("step budget of {budget} exceeded in [{t_from}, {t_to}]")]
    StepBudget { budget: usize, t_from: f64, t_to: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
