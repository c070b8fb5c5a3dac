use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Error, Debug)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate column name `{0}` in header")]
    DuplicateColumn(String),

    #[error("no data rows remain after dropping incomplete rows")]
    EmptyDataset,

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("column `{0}` is constant; cannot standardize")]
    ConstantColumn(String),

    #[error("invalid quantile fractions: require 0 < {low} < {high} < 1")]
    InvalidBandFractions { low: f64, high: f64 },

    #[error("degenerate spread: quantiles at {low} and {high} coincide at {value}")]
    DegenerateSpread { low: f64, high: f64, value: f64 },

    #[error("non-finite value in input")]
    NonFinite,

    #[error("graph error: {0}")]
    Graph(String),

    #[error("asymmetric adjacency: region `{0}` lists `{1}` but not vice versa")]
    AsymmetricAdjacency(String, String),

    #[error("invalid spline basis: {0}")]
    InvalidBasis(String),

    #[error("value {value} outside basis domain [{min}, {max}] at observation {index}")]
    OutsideDomain {
        value: f64,
        min: f64,
        max: f64,
        index: usize,
    },

    #[error("invalid model specification: {0}")]
    InvalidModel(String),

    #[error("region value {0} not present in the region graph")]
    RegionNotInGraph(i64),

    #[error("precision matrix not positive definite (after jitter); check the model for collinear or empty blocks")]
    NotPositiveDefinite,

    #[error("empty sample passed to {0}")]
    EmptySample(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
