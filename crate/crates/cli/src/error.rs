use std::path::{Path, PathBuf};

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("sampler {label}: {source}")]
    Sampler {
        label: String,
        #[source]
        source: subgrad_langevin::Error,
    },

    #[error("pgm: {0}")]
    Pgm(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Core(#[from] subgrad_langevin::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub fn sampler(label: &str, source: subgrad_langevin::Error) -> Self {
        Self::Sampler { label: label.to_string(), source }
    }
}
