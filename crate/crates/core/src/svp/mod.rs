//! The local SVP engine: families, channels, places and kill.

mod cell;
mod context;
mod error;
mod family;
mod pool;
mod registry;
mod status;
mod types;

pub use cell::{Cancelled, ChannelCell, ChannelError};
pub use context::ThreadContext;
pub use error::{CreateError, SyncError, ThreadError};
pub use family::{FamilyControl, FamilyHandle, KillHandle, Runtime, Spawner};
pub use registry::{FunctionRegistry, RegistryError, ThreadBody, ThreadFunction};
pub use status::{FailureKind, KillCause, SyncResult, SyncStatus};
pub use types::{FamilyDescriptor, FamilyId, NodeAddr, Place, RangeError, RangeSpec};
