use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Schema(String),
    #[error("prune rate unreachable: {0}")]
    UnreachableRate(String),
    #[error("bits: {0}")]
    Bits(String),
    #[error("resume log: {0}")]
    Resume(String),
    #[error("log: {0}")]
    Log(String),
    #[error("{0}")]
    Core(#[from] mixq_core::MixqError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Schema(_) => 2,
            Self::UnreachableRate(_) => 3,
            Self::Bits(_) => 4,
            Self::Resume(_) => 5,
            Self::Log(_) => 6,
            Self::Core(_) | Self::Io(_) => 1,
        }
    }
}
