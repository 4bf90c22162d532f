//! Error type shared by all core operations.

use alloc::string::String;
use core::fmt;

/// Classifies an [`Error`] so callers (e.g. a CLI) can map failures to
/// exit codes without string-matching messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorKind {
    /// Tensor/layer shape mismatch.
    Dimension,
    /// A scalar argument outside its valid range (negative temperature,
    /// zero batch size, ...).
    Parameter,
    /// A label or index out of range.
    Index,
    /// Missing or unusable data (empty train/val set, ...).
    Data,
    /// A collection smaller than an operation requires.
    Size,
    /// A randomized allocation could not be satisfied within its retry
    /// budget (split strategies).
    Feasibility,
    /// An API contract violation (e.g. backward from a non-scalar node).
    Contract,
}

/// Error carrying a kind plus a human-readable message naming the
/// offending layer, client, or argument.
#[derive(Debug, Clone, PartialEq)]
pub struct Error {
    kind: ErrorKind,
    msg: String,
}

impl Error {
    pub fn new(kind: ErrorKind, msg: impl Into<String>) -> Self {
        Self {
            kind,
            msg: msg.into(),
        }
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Dimension, msg)
    }

    pub fn parameter(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Parameter, msg)
    }

    pub fn index(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Index, msg)
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Data, msg)
    }

    pub fn size(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Size, msg)
    }

    pub fn feasibility(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Feasibility, msg)
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Self::new(ErrorKind::Contract, msg)
    }

    pub fn kind(&self) -> ErrorKind {
        self.kind
    }

    pub fn message(&self) -> &str {
        &self.msg
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ErrorKind::Dimension => "dimension error",
            ErrorKind::Parameter => "parameter error",
            ErrorKind::Index => "index error",
            ErrorKind::Data => "data error",
            ErrorKind::Size => "size error",
            ErrorKind::Feasibility => "feasibility error",
            ErrorKind::Contract => "contract error",
        };
        write!(f, "{kind}: {}", self.msg)
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
