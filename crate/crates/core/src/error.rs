use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coalition has no members")]
    NullCoalition,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("market of {n} firms exceeds the LP cap of {cap}")]
    MarketTooLarge { n: usize, cap: usize },
    #[error("oracle enumeration supports at most {cap} firms, got {n}")]
    OracleTooLarge { n: usize, cap: usize },
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("simplex failed: {0}")]
    SolverFailure(String),
    #[error("matching yields no inequalities")]
    EmptyInequalitySet,
    #[error("data generating process produced {attempts} consecutive non-integer equilibria")]
    DegenerateDgp { attempts: usize },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("no data rows")]
    EmptyData,
    #[error("row {row}: bad decimal `{value}` in column `{column}`")]
    BadDecimal {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: duplicate firm id {id}")]
    DuplicateId { row: usize, id: usize },
    #[error("row {row}: {msg}")]
    BadRow { row: usize, msg: String },
    #[error("invalid matching: {0}")]
    InvalidMatching(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Short stable identifier used in machine-parsable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NullCoalition => "NullCoalition",
            Error::Config(_) => "ConfigError",
            Error::MarketTooLarge { .. } => "MarketTooLarge",
            Error::OracleTooLarge { .. } => "OracleTooLarge",
            Error::Infeasible => "Infeasible",
            Error::Unbounded => "Unbounded",
            Error::SolverFailure(_) => "SolverFailure",
            Error::EmptyInequalitySet => "EmptyInequalitySet",
            Error::DegenerateDgp { .. } => "DegenerateDGP",
            Error::MissingColumn(_) => "MissingColumn",
            Error::EmptyData => "EmptyData",
            Error::BadDecimal { .. } => "BadDecimal",
            Error::DuplicateId { .. } => "DuplicateId",
            Error::BadRow { .. } => "BadRow",
            Error::InvalidMatching(_) => "InvalidMatching",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
            Error::Toml(_) => "ConfigParse",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
