use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{message}; checkpoint written to {}", checkpoint.display())]
    Blowup { message: String, checkpoint: PathBuf },

    #[error("{0}")]
    Estimation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Blowup { .. } => 3,
            CliError::Estimation(_) => 4,
        }
    }
}

impl From<frontlab_core::Error> for CliError {
    fn from(e: frontlab_core::Error) -> Self {
        use frontlab_core::Error as E;
        match e {
            E::Domain(_) | E::Config(_) | E::Usage(_) => CliError::Config(e.to_string()),
            E::Estimation(_) | E::DegenerateWeights(_) | E::Numerical(_) => CliError::Estimation(e.to_string()),
            // run failures that carry a checkpoint are routed through `runner::classify`
            E::WindowOverflow { .. } | E::NumericalBlowup { .. } => CliError::Estimation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(format!("malformed json: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
