use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("fully masked {axis} {index}")]
    FullyMasked { axis: &'static str, index: usize },
    #[error("instance cap exceeded: {count} > {cap}")]
    InstanceCap { count: usize, cap: usize },
    #[error("positional encoding needs an even channel count, got {0}")]
    OddChannels(usize),
    #[error("position ({x}, {y}) outside {width}x{height} map")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("batch norm variance must be positive (channel {channel})")]
    BatchNormVariance { channel: usize },
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("target has no positive entries")]
    NoPositives,
    #[error("no ground truth")]
    NoGroundTruth,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
