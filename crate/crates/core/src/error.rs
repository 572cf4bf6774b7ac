use std::io;

use thiserror::Error;

/// Errors produced by the engine, the packet codec, the transport and the
/// dataset loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("approximation does not hold: every patch yields an all-zero response vector")]
    AllZeroResponses,

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: Vec<u8>, found: Vec<u8> },

    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),

    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("truncated input: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("malformed payload: {0}")]
    Malformed(String),

    #[error("frame too large: {0} bytes")]
    FrameTooLarge(u64),

    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),

    #[error("server error {code}: {message}")]
    Remote { code: u16, message: String },

    #[error("sha256 mismatch for model {model}")]
    HashMismatch { model: String },

    #[error("version mismatch: expected {expected}, server has {actual}")]
    VersionMismatch { expected: u32, actual: u32 },

    #[error("dataset file {path}: expected {expected} bytes, found {actual}")]
    DatasetLength {
        path: String,
        expected: u64,
        actual: u64,
    },

    #[error("dataset file {path}: bad magic {found:#010x}, expected {expected:#010x}")]
    DatasetMagic { path: String, expected: u32, found: u32 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Stable short name of the variant, for machine-readable reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::LabelOutOfRange { .. } => "label-out-of-range",
            Error::AllZeroResponses => "all-zero-responses",
            Error::BadMagic { .. } => "bad-magic",
            Error::UnsupportedVersion(_) => "unsupported-version",
            Error::CrcMismatch { .. } => "crc-mismatch",
            Error::Truncated { .. } => "truncated",
            Error::Malformed(_) => "malformed",
            Error::FrameTooLarge(_) => "frame-too-large",
            Error::UnknownOpcode(_) => "unknown-opcode",
            Error::Remote { .. } => "remote",
            Error::HashMismatch { .. } => "hash-mismatch",
            Error::VersionMismatch { .. } => "version-mismatch",
            Error::DatasetLength { .. } => "dataset-length",
            Error::DatasetMagic { .. } => "dataset-magic",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
