use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("pixel value {value} at index {index} outside [0, 1]")]
    PixelRange { index: usize, value: f64 },

    #[error("box {bbox} out of bounds for {width}x{height} image")]
    Bounds {
        bbox: String,
        width: u32,
        height: u32,
    },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("cannot satisfy padding: {0}")]
    Unsatisfiable(String),

    #[error("phase error: {0}")]
    Phase(String),

    #[error("session state error: {0}")]
    State(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("toy instruction parse error: {0}")]
    Instruction(String),

    #[error("codec error: {0}")]
    Codec(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("bridge connection error: {0}")]
    BridgeConnection(String),

    #[error("bridge returned status {status}: {body}")]
    BridgeStatus { status: u16, body: String },

    #[error("image io error: {0}")]
    Io(String),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
