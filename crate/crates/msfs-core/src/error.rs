use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid time ratio: {0}")]
    InvalidRatio(String),

    #[error("invalid triplet: {0}")]
    InvalidTriplet(String),

    #[error("degenerate anchors: t_a == t_b == {0}")]
    DegenerateAnchors(f64),

    #[error("insufficient frames: video has {got}, need at least {need}")]
    InsufficientFrames { got: usize, need: usize },

    #[error("unsupported size: {0}")]
    UnsupportedSize(String),

    #[error("empty evaluation: no valid triplet for interval {interval} ratio {ratio}")]
    EmptyEvaluation { interval: usize, ratio: f64 },

    #[error("checkpoint load error: {0}")]
    Load(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, Error>;
