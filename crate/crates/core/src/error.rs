use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("arithmetic intensity undefined: operator moves zero bytes")]
    UndefinedIntensity,

    #[error("cannot profile an empty operator list")]
    EmptyProfile,

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("invalid mapping: {}", .0.join("; "))]
    InvalidMapping(Vec<String>),

    #[error("mapspace holds about {size} mappings, above the enumeration limit of {limit}")]
    MapspaceTooLarge { size: u128, limit: u128 },

    #[error("fusion infeasible: {0}")]
    FusionInfeasible(String),

    #[error("unknown preset '{0}'")]
    UnknownPreset(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
