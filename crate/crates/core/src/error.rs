//! Error type shared by every module of the crate.

use std::io;

/// Failure while decoding one of the binary file formats.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("truncated payload: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("inconsistent file: {0}")]
    Inconsistent(String),
    #[error("malformed token {0:?}")]
    Token(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unsupported image format: {0}")]
    Format(String),
    #[error("codebook is frozen")]
    Frozen,
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("initialization failed: {0}")]
    Init(String),
    #[error("malformed frame: {0}")]
    Frame(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// I/O failure annotated with the path it concerns.
    pub fn io_at(path: impl AsRef<std::path::Path>, err: io::Error) -> Self {
        Error::Io(io::Error::new(
            err.kind(),
            format!("{}: {err}", path.as_ref().display()),
        ))
    }

    /// Short stable identifier for the error kind, used in machine-readable output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Domain(_) => "domain",
            Error::Index(_) => "index",
            Error::Range(_) => "range",
            Error::Argument(_) => "argument",
            Error::Parse(ParseError::BadMagic { .. }) => "parse.bad_magic",
            Error::Parse(ParseError::VersionMismatch { .. }) => "parse.version",
            Error::Parse(ParseError::Truncated { .. }) => "parse.truncated",
            Error::Parse(ParseError::Inconsistent(_)) => "parse.inconsistent",
            Error::Parse(ParseError::Token(_)) => "parse.token",
            Error::Format(_) => "format",
            Error::Frozen => "frozen",
            Error::Contract(_) => "contract",
            Error::Data(_) => "data",
            Error::Init(_) => "init",
            Error::Frame(_) => "frame",
            Error::Config(_) => "config",
            Error::Degenerate(_) => "degenerate",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
