use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix market parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("A^T A is not full rank: lambda_d = {lambda_d:e} is below the rank tolerance for lambda_1 = {lambda_1:e}")]
    RankDeficient { lambda_1: f64, lambda_d: f64 },

    #[error("cannot split {rows} rows across {agents} agents")]
    AgentCount { agents: usize, rows: usize },

    #[error("iterate diverged at t = {t}")]
    Diverged { t: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),

    #[error("||I - delta A^T A||_2 = {0} is not below 1; the gradient iteration does not contract")]
    NotContractive(f64),

    #[error("cannot estimate a noise level from an empty sample")]
    EmptySample,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
