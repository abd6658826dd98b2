use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got `{content}`")]
    Syntax { line: usize, content: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid `{key}`: {message}")]
    Invariant { key: String, message: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("could not place {wanted} APs with minimum spacing {d_min:.2} m (placed {placed})")]
    PlacementFailed {
        wanted: usize,
        placed: usize,
        d_min: f64,
    },
    #[error("cluster size {cluster_size} exceeds the {num_aps} available APs")]
    ClusterTooLarge { cluster_size: usize, num_aps: usize },
    #[error("no pilot groups available: tau_p = {tau_p}, N_UE = {ue_antennas}")]
    NoPilots { tau_p: usize, ue_antennas: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum CodecError {
    #[error("unsupported orthogonal design for codeword span {0}")]
    UnsupportedDesign(usize),
    #[error("stream has {got} symbols, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("row index {index} outside 1..={span}")]
    RowOutOfRange { index: usize, span: usize },
    #[error("stream index {index} outside 1..={streams}")]
    StreamOutOfRange { index: usize, streams: usize },
    #[error("block needs {expected} stream rows, got {got}")]
    MissingStream { expected: usize, got: usize },
    #[error("matrix shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    Shape {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },
    #[error("constellation order {0} is not a power of two")]
    BadConstellation(usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum PrecodingError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("regularized P-MMSE system for UE {ue} is singular")]
    Singular { ue: usize },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Precoding(#[from] PrecodingError),
    #[error("setup {setup}: placement failed after {attempts} attempts: {source}")]
    SetupFailed {
        setup: usize,
        attempts: usize,
        #[source]
        source: TopologyError,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
