//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A class label outside [0, class_count).
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    /// Bad argument to a constructor or operation.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Split index outside (0, layer_count).
    #[error("split index {index} out of range for stack of {layers} layers")]
    SplitOutOfRange { index: usize, layers: usize },

    /// A gradient bundle that does not mirror the stack's parameters.
    #[error("misaligned gradient bundle: {0}")]
    MisalignedGradients(String),

    /// IDX file with an unexpected magic number.
    #[error("{path}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: String,
        found: u32,
        expected: u32,
    },

    /// IDX file shorter than its header claims.
    #[error("{path}: truncated file ({detail})")]
    TruncatedFile { path: String, detail: String },

    /// Image and label files disagree on the sample count.
    #[error("count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    /// A frame that cannot be decoded.
    #[error("wire decode: {0}")]
    WireDecode(String),

    /// A peer sent a frame the protocol state machine did not expect.
    #[error("protocol violation: expected {expected}, got {got}")]
    ProtocolViolation { expected: String, got: String },

    /// The transport was closed by the peer.
    #[error("transport closed by peer")]
    TransportClosed,

    /// Fingerprint generation could not collect enough misclassified examples.
    #[error("fingerprint exhaustion: {0}")]
    FingerprintExhaustion(String),

    /// Problem in a run configuration file.
    #[error("config: {0}")]
    Config(String),

    /// A background session thread died.
    #[error("internal: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
