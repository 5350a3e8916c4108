//! Failure handling: connection retries, watchdog deadlines and restarting a
//! family on another place.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use log::warn;
use thiserror::Error;

use crate::node::Node;
use crate::svp::{CreateError, FamilyDescriptor, FamilyId, KillCause, KillHandle, Place, SyncResult};

/// How hard a remote create tries to reach its node.
///
/// Only connection establishment is retried. Once a Create frame has been
/// sent the family is never re-run automatically.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub multiplier: f64,
    pub connect_timeout: Duration,
    /// Bound on the whole remote family, from create to sync. Expiry kills
    /// the family and reports it as timed out.
    pub overall_deadline: Option<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(50),
            multiplier: 2.0,
            connect_timeout: Duration::from_secs(1),
            overall_deadline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("max_attempts must be at least 1")]
    NoAttempts,
    #[error("backoff multiplier must be finite and nonnegative")]
    BadMultiplier,
    #[error("connect timeout must be positive")]
    ZeroConnectTimeout,
}

impl RetryPolicy {
    /// A single attempt and no deadline.
    pub fn once() -> RetryPolicy {
        RetryPolicy {
            max_attempts: 1,
            ..RetryPolicy::default()
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.max_attempts == 0 {
            return Err(PolicyError::NoAttempts);
        }
        if !self.multiplier.is_finite() || self.multiplier < 0.0 {
            return Err(PolicyError::BadMultiplier);
        }
        if self.connect_timeout.is_zero() {
            return Err(PolicyError::ZeroConnectTimeout);
        }
        Ok(())
    }

    /// Delay before attempt `attempt` (1-based); zero for the first.
    pub fn delay_before(&self, attempt: u32) -> Duration {
        if attempt <= 1 {
            return Duration::ZERO;
        }
        let factor = self.multiplier.powi(attempt as i32 - 2);
        self.base_delay.mul_f64(factor.min(1e6))
    }
}

type Action = Box<dyn FnOnce(&TimerInner) + Send>;

/// One thread serving every deadline of a node.
#[derive(Clone)]
pub(crate) struct Timer {
    inner: Arc<TimerInner>,
    _guard: Arc<TimerGuard>,
}

pub(crate) struct TimerInner {
    state: Mutex<TimerState>,
    wake: Condvar,
}

#[derive(Default)]
struct TimerState {
    heap: BinaryHeap<Reverse<(Instant, u64)>>,
    actions: HashMap<u64, (Option<FamilyId>, Action)>,
    keyed: HashMap<FamilyId, u64>,
    next: u64,
    started: bool,
    shutdown: bool,
}

struct TimerGuard(Arc<TimerInner>);

impl Drop for TimerGuard {
    fn drop(&mut self) {
        self.0.state.lock().unwrap().shutdown = true;
        self.0.wake.notify_all();
    }
}

impl Timer {
    pub(crate) fn new() -> Timer {
        let inner = Arc::new(TimerInner {
            state: Mutex::new(TimerState::default()),
            wake: Condvar::new(),
        });
        Timer {
            _guard: Arc::new(TimerGuard(Arc::clone(&inner))),
            inner,
        }
    }

    /// Runs `action` after `delay`. A keyed entry replaces any pending entry
    /// with the same key.
    pub(crate) fn schedule(
        &self,
        key: Option<FamilyId>,
        delay: Duration,
        action: impl FnOnce(&TimerInner) + Send + 'static,
    ) {
        let start = self.inner.schedule(key, delay, Box::new(action));
        if start {
            let inner = Arc::clone(&self.inner);
            thread::Builder::new()
                .name("dsvp-timer".into())
                .spawn(move || inner.run())
                .expect("spawn timer thread");
        }
    }

    pub(crate) fn cancel(&self, key: &FamilyId) {
        let mut st = self.inner.state.lock().unwrap();
        if let Some(seq) = st.keyed.remove(key) {
            st.actions.remove(&seq);
        }
    }
}

impl TimerInner {
    // Returns true if the caller must start the timer thread.
    fn schedule(&self, key: Option<FamilyId>, delay: Duration, action: Action) -> bool {
        let mut st = self.state.lock().unwrap();
        let seq = st.next;
        st.next += 1;
        if let Some(k) = &key {
            if let Some(old) = st.keyed.insert(k.clone(), seq) {
                st.actions.remove(&old);
            }
        }
        st.actions.insert(seq, (key, action));
        st.heap.push(Reverse((Instant::now() + delay, seq)));
        let start = !st.started;
        st.started = true;
        drop(st);
        self.wake.notify_all();
        start
    }

    fn after(&self, delay: Duration, action: impl FnOnce(&TimerInner) + Send + 'static) {
        // Only called from the timer thread, which is already running.
        self.schedule(None, delay, Box::new(action));
    }

    fn run(&self) {
        let mut st = self.state.lock().unwrap();
        loop {
            if st.shutdown {
                return;
            }
            let Some(&Reverse((due, seq))) = st.heap.peek() else {
                st = self.wake.wait(st).unwrap();
                continue;
            };
            let now = Instant::now();
            if due > now {
                st = self.wake.wait_timeout(st, due - now).unwrap().0;
                continue;
            }
            st.heap.pop();
            let Some((key, action)) = st.actions.remove(&seq) else {
                continue;
            };
            if let Some(k) = key {
                if st.keyed.get(&k) == Some(&seq) {
                    st.keyed.remove(&k);
                }
            }
            drop(st);
            action(self);
            st = self.state.lock().unwrap();
        }
    }
}

/// Kills families that outlive an application-defined deadline.
#[derive(Clone)]
pub struct Watchdog {
    timer: Timer,
    grace: Duration,
}

pub const DEFAULT_GRACE: Duration = Duration::from_millis(250);

impl Default for Watchdog {
    fn default() -> Self {
        Watchdog::new(DEFAULT_GRACE)
    }
}

impl Watchdog {
    /// `grace` is how long a killed family may take to wind down before a
    /// warning is logged.
    pub fn new(grace: Duration) -> Watchdog {
        Watchdog {
            timer: Timer::new(),
            grace,
        }
    }

    pub(crate) fn with_timer(timer: Timer, grace: Duration) -> Watchdog {
        Watchdog { timer, grace }
    }

    pub fn grace(&self) -> Duration {
        self.grace
    }

    /// Kills the family with cause [`KillCause::Watchdog`] unless it has
    /// terminated within `deadline`. Arming again replaces the deadline.
    /// A no-op on a family that already terminated.
    pub fn arm(&self, family: &KillHandle, deadline: Duration) {
        if family.is_finished() {
            return;
        }
        let family = family.clone();
        let grace = self.grace;
        self.timer.schedule(Some(family.fid().clone()), deadline, move |timer| {
            if family.is_finished() {
                return;
            }
            family.kill_with(KillCause::Watchdog);
            timer.after(grace, move |_| {
                if !family.is_finished() {
                    warn!("family {} still running {:?} after watchdog kill", family.fid(), grace);
                }
            });
        });
    }

    pub fn disarm(&self, fid: &FamilyId) {
        self.timer.cancel(fid);
    }
}

/// Kills the previous attempt (if any) and runs `desc` again on `alternate`.
///
/// Inputs are taken from the buffers referenced by `desc` at the time of the
/// call, so updates the caller made since the first attempt are honored.
/// Outputs a superseded family might still deliver are discarded.
pub fn restart_on(
    node: &Node,
    previous: Option<&KillHandle>,
    alternate: &Place,
    desc: &FamilyDescriptor,
    policy: &RetryPolicy,
) -> Result<SyncResult, CreateError> {
    if let Some(old) = previous {
        old.kill();
    }
    let mut handle = node.create_with_retry(desc.clone().on(alternate.clone()), policy)?;
    Ok(handle.sync().expect("fresh handle is synced once"))
}
