use std::fmt;

use crate::value::ChannelValue;

/// Why a family was killed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KillCause {
    /// An explicit kill, including one recursing from a killed parent.
    Requested,
    /// A thread of the family executed break.
    Break,
    /// A watchdog deadline expired.
    Watchdog,
}

/// Classification of a family that did not complete.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FailureKind {
    ConnectRefused,
    ConnectionLost,
    Timeout,
    /// The family's own code failed, or the node running it rejected it.
    RemoteError,
    KilledByWatchdog,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureKind::ConnectRefused => "connect_refused",
            FailureKind::ConnectionLost => "connection_lost",
            FailureKind::Timeout => "timeout",
            FailureKind::RemoteError => "remote_error",
            FailureKind::KilledByWatchdog => "killed_by_watchdog",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncStatus {
    Completed,
    Killed(KillCause),
    Failed { kind: FailureKind, detail: String },
    TimedOut,
}

impl SyncStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, SyncStatus::Completed)
    }

    pub fn is_killed(&self) -> bool {
        matches!(self, SyncStatus::Killed(_))
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, SyncStatus::Failed { .. })
    }

    /// The failure classification of any non-completed outcome.
    pub fn failure_kind(&self) -> Option<FailureKind> {
        match self {
            SyncStatus::Completed => None,
            SyncStatus::Killed(KillCause::Watchdog) => Some(FailureKind::KilledByWatchdog),
            SyncStatus::Killed(_) => None,
            SyncStatus::Failed { kind, .. } => Some(*kind),
            SyncStatus::TimedOut => Some(FailureKind::Timeout),
        }
    }
}

impl fmt::Display for SyncStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SyncStatus::Completed => f.write_str("completed"),
            SyncStatus::Killed(KillCause::Requested) => f.write_str("killed"),
            SyncStatus::Killed(KillCause::Break) => f.write_str("killed (break)"),
            SyncStatus::Killed(KillCause::Watchdog) => f.write_str("killed (watchdog)"),
            SyncStatus::Failed { kind, detail } if detail.is_empty() => write!(f, "failed ({kind})"),
            SyncStatus::Failed { kind, detail } => write!(f, "failed ({kind}): {detail}"),
            SyncStatus::TimedOut => f.write_str("timed_out"),
        }
    }
}

/// Outcome of a sync.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncResult {
    pub status: SyncStatus,
    /// Values written by the last thread on each shared channel (the
    /// create-time initials for an empty family). Empty unless completed.
    pub final_shareds: Vec<ChannelValue>,
    /// Whether output data reached the caller's memory. Always false when
    /// the family did not complete: its outputs are undefined.
    pub outputs_applied: bool,
}

impl SyncResult {
    pub fn completed(final_shareds: Vec<ChannelValue>) -> SyncResult {
        SyncResult {
            status: SyncStatus::Completed,
            final_shareds,
            outputs_applied: true,
        }
    }

    pub fn unsuccessful(status: SyncStatus) -> SyncResult {
        debug_assert!(!status.is_completed());
        SyncResult {
            status,
            final_shareds: Vec::new(),
            outputs_applied: false,
        }
    }

    pub fn failed(kind: FailureKind, detail: impl Into<String>) -> SyncResult {
        SyncResult::unsuccessful(SyncStatus::Failed {
            kind,
            detail: detail.into(),
        })
    }
}
