use std::sync::Arc;
use std::time::Duration;

use super::cell::ChannelError;
use super::error::{CreateError, ThreadError};
use super::family::{Family, FamilyHandle};
use super::status::{KillCause, SyncResult};
use super::types::{FamilyDescriptor, FamilyId, Place};
use crate::value::{Buffer, ChannelValue};

/// What a running thread sees of its family.
///
/// Reads of shared and global channels, `create`, `sync`, `poll` and `sleep`
/// are cancellation points: once the family is killed they return
/// [`ThreadError::Killed`].
pub struct ThreadContext<'a> {
    family: &'a Arc<Family>,
    pos: u64,
    index: i64,
    written: Vec<bool>,
}

impl<'a> ThreadContext<'a> {
    pub(super) fn new(family: &'a Arc<Family>, pos: u64, index: i64) -> ThreadContext<'a> {
        ThreadContext {
            family,
            pos,
            index,
            written: vec![false; family.arity],
        }
    }

    /// The index value of this thread.
    pub fn index(&self) -> i64 {
        self.index
    }

    /// Zero-based position of this thread in its family.
    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn family_id(&self) -> &FamilyId {
        &self.family.fid
    }

    pub fn thread_count(&self) -> u64 {
        self.family.count
    }

    pub fn is_sequential(&self) -> bool {
        self.family.sequential
    }

    fn check_shared(&self, channel: usize) -> Result<(), ChannelError> {
        if channel >= self.family.arity {
            return Err(ChannelError::OutOfRange {
                channel,
                arity: self.family.arity,
            });
        }
        Ok(())
    }

    /// Reads the value of shared channel `channel` written by the previous
    /// thread, or the parent's initial value for the first thread.
    pub fn read_shared(&self, channel: usize) -> Result<ChannelValue, ThreadError> {
        self.check_shared(channel)?;
        let family = self.family;
        family
            .shared_cell(self.pos, channel)
            .read(|| family.killed())
            .map_err(|_| ThreadError::Killed)
    }

    pub fn read_shared_i64(&self, channel: usize) -> Result<i64, ThreadError> {
        let v = self.read_shared(channel)?;
        v.as_i64()
            .ok_or_else(|| ThreadError::fault(format!("shared {channel} is not an integer: {v:?}")))
    }

    /// Writes shared channel `channel` for the next thread. Each shared can
    /// be written once per thread.
    pub fn write_shared(&mut self, channel: usize, value: impl Into<ChannelValue>) -> Result<(), ThreadError> {
        self.check_shared(channel)?;
        let value = value.into();
        let expected = self.family.function.shared_params()[channel];
        if value.param_type() != expected {
            return Err(ChannelError::TypeMismatch {
                channel,
                expected,
                actual: value.param_type(),
            }
            .into());
        }
        if self.written[channel] {
            return Err(ChannelError::AlreadyWritten { channel }.into());
        }
        self.family
            .shared_cell(self.pos + 1, channel)
            .write(value)
            .map_err(|_| ChannelError::AlreadyWritten { channel })?;
        self.written[channel] = true;
        Ok(())
    }

    pub fn read_global(&self, channel: usize) -> Result<ChannelValue, ThreadError> {
        let cells = &self.family.global_cells;
        let cell = cells.get(channel).ok_or(ChannelError::OutOfRange {
            channel,
            arity: cells.len(),
        })?;
        let family = self.family;
        cell.read(|| family.killed()).map_err(|_| ThreadError::Killed)
    }

    pub fn global_i64(&self, channel: usize) -> Result<i64, ThreadError> {
        let v = self.read_global(channel)?;
        v.as_i64()
            .ok_or_else(|| ThreadError::fault(format!("global {channel} is not an integer: {v:?}")))
    }

    pub fn global_buffer(&self, channel: usize) -> Result<Buffer, ThreadError> {
        match self.read_global(channel)? {
            ChannelValue::Buffer(b) => Ok(b),
            other => Err(ThreadError::fault(format!("global {channel} is not a buffer: {other:?}"))),
        }
    }

    /// Creates a child family. The child is killed with this family.
    pub fn create(&mut self, desc: FamilyDescriptor) -> Result<FamilyHandle, ThreadError> {
        if self.family.killed() {
            return Err(ThreadError::Killed);
        }
        let handle = self.family.spawner.spawn(desc)?;
        if !self.family.adopt(handle.killer()) {
            return Err(ThreadError::Killed);
        }
        Ok(handle)
    }

    /// Waits for a child to terminate.
    pub fn sync(&mut self, handle: &mut FamilyHandle) -> Result<SyncResult, ThreadError> {
        if self.family.killed() {
            return Err(ThreadError::Killed);
        }
        let result = handle.sync()?;
        if self.family.killed() {
            return Err(ThreadError::Killed);
        }
        Ok(result)
    }

    /// Kills any family this thread holds a handle to.
    pub fn kill(&self, handle: &FamilyHandle) {
        handle.kill();
    }

    /// Kills the thread's own family and returns the error to unwind with:
    ///
    /// ```text
    /// return Err(ctx.break_family());
    /// ```
    pub fn break_family(&mut self) -> ThreadError {
        self.family.abort(Some(KillCause::Break), None);
        ThreadError::Broken
    }

    /// An explicit cancellation point for long computations.
    pub fn poll(&self) -> Result<(), ThreadError> {
        if self.family.killed() {
            Err(ThreadError::Killed)
        } else {
            Ok(())
        }
    }

    /// Sleeps, returning early with [`ThreadError::Killed`] on kill.
    pub fn sleep(&self, duration: Duration) -> Result<(), ThreadError> {
        if self.family.nap(duration) {
            Ok(())
        } else {
            Err(ThreadError::Killed)
        }
    }

    /// Resolves a place configured on the node running this thread.
    pub fn place(&self, name: &str) -> Result<Place, ThreadError> {
        self.family
            .spawner
            .resolve_place(name)
            .ok_or_else(|| CreateError::UnknownPlace(name.to_owned()).into())
    }

    /// Forwards each shared channel this thread did not write, so that its
    /// successor still sees a value.
    pub(super) fn forward_unwritten(&mut self) -> Result<(), ThreadError> {
        for channel in 0..self.family.arity {
            if !self.written[channel] {
                let v = self.read_shared(channel)?;
                self.family
                    .shared_cell(self.pos + 1, channel)
                    .write(v)
                    .map_err(|_| ChannelError::AlreadyWritten { channel })?;
                self.written[channel] = true;
            }
        }
        Ok(())
    }
}
