use mirage_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VlmError {
    #[error("chat transport error: {0}")]
    Transport(String),

    #[error("chat endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },

    #[error("{stage}: no valid structured output after {attempts} attempts ({last_error}); last output: {last_output}")]
    Exhausted {
        stage: String,
        attempts: usize,
        last_error: String,
        last_output: String,
    },

    #[error("clause {clause}: {message}")]
    Grammar { clause: usize, message: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{stage}: budget of {cap} exhausted")]
    Budget { stage: String, cap: usize },

    #[error("referent {0:?} does not resolve to a scene object")]
    Unresolved(String),

    #[error("client configuration: {0}")]
    Config(String),

    #[error("mock transcript: {0}")]
    Transcript(String),

    #[error("io: {0}")]
    Io(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl VlmError {
    /// True for failures of the remote service itself rather than its output.
    pub fn is_external(&self) -> bool {
        matches!(self, Self::Transport(_) | Self::Status { .. })
    }
}

pub type Result<T, E = VlmError> = std::result::Result<T, E>;
