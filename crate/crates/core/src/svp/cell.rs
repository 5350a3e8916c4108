use std::sync::{Condvar, Mutex};

use thiserror::Error;

use crate::value::ChannelValue;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("channel {channel} already written (write-once violation)")]
    AlreadyWritten { channel: usize },
    #[error("channel {channel} out of range: arity is {arity}")]
    OutOfRange { channel: usize, arity: usize },
    #[error("channel {channel} declared {expected:?}, got {actual:?}")]
    TypeMismatch {
        channel: usize,
        expected: crate::value::ParamType,
        actual: crate::value::ParamType,
    },
}

/// A write-once synchronization cell.
///
/// Empty until its single write; reads of an empty cell block, reads of a
/// full cell return the value without consuming it.
pub struct ChannelCell {
    slot: Mutex<Option<ChannelValue>>,
    filled: Condvar,
}

/// Returned by [`ChannelCell::read`] when the wait was abandoned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cancelled;

impl Default for ChannelCell {
    fn default() -> Self {
        ChannelCell::empty()
    }
}

impl ChannelCell {
    pub fn empty() -> ChannelCell {
        ChannelCell {
            slot: Mutex::new(None),
            filled: Condvar::new(),
        }
    }

    pub fn full(value: ChannelValue) -> ChannelCell {
        ChannelCell {
            slot: Mutex::new(Some(value)),
            filled: Condvar::new(),
        }
    }

    pub fn is_full(&self) -> bool {
        self.slot.lock().unwrap().is_some()
    }

    /// Non-blocking write. Fails if the cell was already written.
    pub fn write(&self, value: ChannelValue) -> Result<(), ChannelValue> {
        let mut slot = self.slot.lock().unwrap();
        if slot.is_some() {
            return Err(value);
        }
        *slot = Some(value);
        drop(slot);
        self.filled.notify_all();
        Ok(())
    }

    /// Blocks until the cell is full or `cancelled()` turns true.
    ///
    /// `cancelled` is evaluated with the cell locked; whoever flips it must
    /// call [`ChannelCell::wake`] afterwards.
    pub fn read(&self, cancelled: impl Fn() -> bool) -> Result<ChannelValue, Cancelled> {
        let mut slot = self.slot.lock().unwrap();
        loop {
            if let Some(v) = slot.as_ref() {
                return Ok(v.clone());
            }
            if cancelled() {
                return Err(Cancelled);
            }
            slot = self.filled.wait(slot).unwrap();
        }
    }

    pub fn try_read(&self) -> Option<ChannelValue> {
        self.slot.lock().unwrap().clone()
    }

    /// Wakes blocked readers so they re-check cancellation.
    pub fn wake(&self) {
        let _guard = self.slot.lock().unwrap();
        self.filled.notify_all();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::Arc;
    use std::thread;
    use std::time::Duration;

    #[test]
    fn second_write_fails() {
        let c = ChannelCell::empty();
        c.write(1i64.into()).unwrap();
        assert!(c.write(2i64.into()).is_err());
        assert_eq!(c.try_read(), Some(1i64.into()));
    }

    #[test]
    fn read_is_not_destructive() {
        let c = ChannelCell::full(5i64.into());
        assert_eq!(c.read(|| false), Ok(5i64.into()));
        assert_eq!(c.read(|| false), Ok(5i64.into()));
    }

    #[test]
    fn reader_suspends_until_written() {
        let c = Arc::new(ChannelCell::empty());
        let reader = {
            let c = Arc::clone(&c);
            thread::spawn(move || c.read(|| false))
        };
        thread::sleep(Duration::from_millis(20));
        assert!(!reader.is_finished());
        c.write(9i64.into()).unwrap();
        assert_eq!(reader.join().unwrap(), Ok(9i64.into()));
    }

    #[test]
    fn cancellation_wakes_reader() {
        let c = Arc::new(ChannelCell::empty());
        let flag = Arc::new(AtomicBool::new(false));
        let reader = {
            let (c, flag) = (Arc::clone(&c), Arc::clone(&flag));
            thread::spawn(move || c.read(|| flag.load(Ordering::SeqCst)))
        };
        thread::sleep(Duration::from_millis(20));
        flag.store(true, Ordering::SeqCst);
        c.wake();
        assert_eq!(reader.join().unwrap(), Err(Cancelled));
    }
}
