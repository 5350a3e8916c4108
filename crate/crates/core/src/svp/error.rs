use thiserror::Error;

use super::cell::ChannelError;
use super::types::RangeError;
use crate::datadesc::{DescribeError, TransferError};
use crate::value::{MemoryError, ParamType};
use crate::wire::WireError;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CreateError {
    #[error("unknown thread function {0:?}")]
    UnknownFunction(String),
    #[error("invalid range: {0}")]
    InvalidRange(#[from] RangeError),
    #[error("{function}: expected {expected} {kind} channels, got {actual}")]
    ArityMismatch {
        function: String,
        kind: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{function}: {kind} channel {slot} declared {expected:?}, got {actual:?}")]
    ArgumentType {
        function: String,
        kind: &'static str,
        slot: usize,
        expected: ParamType,
        actual: ParamType,
    },
    #[error("unknown place {0:?}")]
    UnknownPlace(String),
    #[error("thread function {0:?} has no data description and can only be created locally")]
    NotDistributable(String),
    #[error("shared channel {0} carries a buffer reference, which cannot cross nodes")]
    SharedBufferNotDistributable(usize),
    #[error("describing inputs failed: {0}")]
    Describe(#[from] DescribeError),
    #[error("serializing inputs failed: {0}")]
    Transfer(#[from] TransferError),
    #[error("encoding failed: {0}")]
    Wire(#[from] WireError),
    #[error("the creating family was killed")]
    Killed,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyncError {
    #[error("family was already synced")]
    DoubleSync,
}

/// Ways a thread function stops early.
///
/// [`ThreadError::Killed`] and [`ThreadError::Broken`] are the unwinding
/// signals returned by cancellation points; propagating them with `?` is the
/// expected reaction. Any other error fails the whole family.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ThreadError {
    #[error("family killed")]
    Killed,
    #[error("family broken")]
    Broken,
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Create(#[from] CreateError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("{0}")]
    Fault(String),
}

impl ThreadError {
    pub fn fault(msg: impl Into<String>) -> ThreadError {
        ThreadError::Fault(msg.into())
    }

    pub fn is_unwind(&self) -> bool {
        matches!(self, ThreadError::Killed | ThreadError::Broken)
    }
}
