use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use log::{debug, warn};

use super::cell::ChannelCell;
use super::context::ThreadContext;
use super::error::{CreateError, SyncError, ThreadError};
use super::pool::Pool;
use super::registry::{FunctionRegistry, RegistryError, ThreadFunction};
use super::status::{FailureKind, KillCause, SyncResult, SyncStatus};
use super::types::{FamilyDescriptor, FamilyId, Place, RangeSpec};

/// Something that can start families: the local engine, or a node that also
/// routes to remote places.
pub trait Spawner: Send + Sync {
    fn spawn(&self, desc: FamilyDescriptor) -> Result<FamilyHandle, CreateError>;

    /// Looks up a named place.
    fn resolve_place(&self, name: &str) -> Option<Place>;
}

/// Lifecycle operations shared by local and remote families.
pub trait FamilyControl: Send + Sync {
    fn fid(&self) -> &FamilyId;
    /// Blocks until the family reached a terminal state. May be called
    /// repeatedly; every call returns the same result.
    fn wait(&self) -> SyncResult;
    fn kill(&self, cause: KillCause);
    fn is_finished(&self) -> bool;
}

/// Returned by create; consumed by exactly one sync.
pub struct FamilyHandle {
    control: Arc<dyn FamilyControl>,
    synced: bool,
}

impl FamilyHandle {
    pub fn new(control: Arc<dyn FamilyControl>) -> FamilyHandle {
        FamilyHandle {
            control,
            synced: false,
        }
    }

    pub fn fid(&self) -> &FamilyId {
        self.control.fid()
    }

    /// Waits for the family to terminate.
    ///
    /// A second call on the same handle fails with [`SyncError::DoubleSync`].
    pub fn sync(&mut self) -> Result<SyncResult, SyncError> {
        if self.synced {
            return Err(SyncError::DoubleSync);
        }
        self.synced = true;
        Ok(self.control.wait())
    }

    /// Asynchronously terminates the family and, recursively, its children.
    /// Idempotent; a no-op on a family that already completed.
    pub fn kill(&self) {
        self.control.kill(KillCause::Requested);
    }

    pub fn is_finished(&self) -> bool {
        self.control.is_finished()
    }

    /// A cloneable handle that can only kill or observe the family.
    pub fn killer(&self) -> KillHandle {
        KillHandle {
            control: Arc::clone(&self.control),
        }
    }
}

impl fmt::Debug for FamilyHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FamilyHandle")
            .field("fid", self.fid())
            .field("synced", &self.synced)
            .finish()
    }
}

#[derive(Clone)]
pub struct KillHandle {
    control: Arc<dyn FamilyControl>,
}

impl KillHandle {
    pub fn fid(&self) -> &FamilyId {
        self.control.fid()
    }

    pub fn kill(&self) {
        self.control.kill(KillCause::Requested);
    }

    pub fn kill_with(&self, cause: KillCause) {
        self.control.kill(cause);
    }

    pub fn is_finished(&self) -> bool {
        self.control.is_finished()
    }

    /// Blocks until the family terminated, without consuming its sync.
    pub fn wait_finished(&self) -> SyncResult {
        self.control.wait()
    }
}

impl fmt::Debug for KillHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("KillHandle").field(self.fid()).finish()
    }
}

pub(crate) type CompletionHook = Box<dyn FnOnce(&SyncResult) + Send>;

const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(10);
// Children kept per family before finished ones are pruned.
const CHILD_PRUNE_THRESHOLD: usize = 64;

/// The local SVP engine of one node.
#[derive(Clone)]
pub struct Runtime {
    inner: Arc<RuntimeInner>,
}

struct RuntimeInner {
    node_id: String,
    serial: AtomicU64,
    functions: Arc<FunctionRegistry>,
    pool: Pool,
    exclusive: Mutex<HashMap<String, ExclusiveQueue>>,
    default_block: u64,
}

#[derive(Default)]
struct ExclusiveQueue {
    busy: bool,
    waiting: VecDeque<Arc<Family>>,
}

impl Runtime {
    pub fn new(node_id: &str) -> Runtime {
        Runtime::with_registry(node_id, Arc::new(FunctionRegistry::new()))
    }

    pub fn with_registry(node_id: &str, functions: Arc<FunctionRegistry>) -> Runtime {
        let cpus = std::thread::available_parallelism().map_or(4, |n| n.get() as u64);
        Runtime {
            inner: Arc::new(RuntimeInner {
                node_id: node_id.to_owned(),
                serial: AtomicU64::new(1),
                functions,
                pool: Pool::new(DEFAULT_IDLE_TIMEOUT),
                exclusive: Mutex::new(HashMap::new()),
                default_block: cpus.clamp(4, 64),
            }),
        }
    }

    pub fn node_id(&self) -> &str {
        &self.inner.node_id
    }

    pub fn functions(&self) -> &Arc<FunctionRegistry> {
        &self.inner.functions
    }

    pub fn register(&self, function: ThreadFunction) -> Result<(), RegistryError> {
        self.inner.functions.register(function)
    }

    pub fn next_fid(&self) -> FamilyId {
        FamilyId {
            origin: self.inner.node_id.clone(),
            serial: self.inner.serial.fetch_add(1, Ordering::Relaxed),
        }
    }

    /// Starts a family on a local place and returns without waiting.
    pub fn create(&self, desc: FamilyDescriptor) -> Result<FamilyHandle, CreateError> {
        if !desc.place.is_local() {
            return Err(CreateError::UnknownPlace(format!("{:?}", desc.place.node)));
        }
        let fid = self.next_fid();
        self.start_family(desc, fid, Arc::new(self.clone()), None)
    }

    /// Runs the family to completion on the calling thread, one thread at a
    /// time in index order. Nested creates run the same way.
    pub fn run_sequential(&self, desc: FamilyDescriptor) -> Result<SyncResult, CreateError> {
        let family = self.sequential_family(desc)?;
        Ok(family.wait())
    }

    fn sequential_family(&self, desc: FamilyDescriptor) -> Result<Arc<Family>, CreateError> {
        let fid = self.next_fid();
        let spawner = Arc::new(SequentialSpawner {
            runtime: self.clone(),
        });
        let family = self.build_family(desc, fid, spawner, true)?;
        for pos in 0..family.count {
            if family.killed() {
                break;
            }
            family.run_thread(pos);
        }
        family.finalize();
        Ok(family)
    }

    /// Starts a family under an explicit identity, with nested creates
    /// routed through `spawner`. `hook` runs once the family terminates.
    pub(crate) fn start_family(
        &self,
        desc: FamilyDescriptor,
        fid: FamilyId,
        spawner: Arc<dyn Spawner>,
        hook: Option<CompletionHook>,
    ) -> Result<FamilyHandle, CreateError> {
        let family = self.build_family(desc, fid, spawner, false)?;
        if let Some(hook) = hook {
            family.state.lock().unwrap().hooks.push(hook);
        }
        debug!(
            "create {} {} x{} on {:?}",
            family.fid,
            family.function.name(),
            family.count,
            family.place
        );
        self.launch(Arc::clone(&family));
        Ok(FamilyHandle::new(family))
    }

    fn build_family(
        &self,
        desc: FamilyDescriptor,
        fid: FamilyId,
        spawner: Arc<dyn Spawner>,
        sequential: bool,
    ) -> Result<Arc<Family>, CreateError> {
        let function = self
            .inner
            .functions
            .get(&desc.function)
            .ok_or_else(|| CreateError::UnknownFunction(desc.function.clone()))?;
        let count = desc.range.thread_count()?;
        function.check_args(&desc.shareds, &desc.globals)?;
        let arity = desc.shareds.len();
        let shared_cells = if arity == 0 {
            Vec::new()
        } else {
            let total = usize::try_from(count)
                .ok()
                .and_then(|c| c.checked_add(1))
                .and_then(|c| c.checked_mul(arity))
                .ok_or(CreateError::InvalidRange(super::types::RangeError::TooLarge(
                    count.into(),
                )))?;
            let mut cells = Vec::with_capacity(total);
            cells.extend(desc.shareds.iter().cloned().map(ChannelCell::full));
            cells.resize_with(total, ChannelCell::empty);
            cells
        };
        let global_cells = desc.globals.into_iter().map(ChannelCell::full).collect();
        let block = match desc.range.block {
            0 => self.inner.default_block,
            b => b,
        };
        Ok(Arc::new(Family {
            fid,
            function,
            range: desc.range,
            count,
            block,
            arity,
            shared_cells,
            global_cells,
            killed: AtomicBool::new(false),
            state: Mutex::new(FamilyState::default()),
            done: Condvar::new(),
            nap: Mutex::new(()),
            nap_cv: Condvar::new(),
            next_pos: AtomicU64::new(0),
            active: AtomicUsize::new(0),
            spawner,
            runtime: self.clone(),
            place: desc.place,
            sequential,
        }))
    }

    fn launch(&self, family: Arc<Family>) {
        if family.place.exclusive {
            let mut queues = self.inner.exclusive.lock().unwrap();
            let queue = queues.entry(family.place.resource.clone()).or_default();
            if queue.busy {
                queue.waiting.push_back(family);
                return;
            }
            queue.busy = true;
        }
        self.start_workers(family);
    }

    fn start_workers(&self, family: Arc<Family>) {
        let workers = family.count.min(family.block).max(1) as usize;
        family.active.store(workers, Ordering::SeqCst);
        if family.count == 0 {
            family.worker_exit();
            return;
        }
        for _ in 0..workers {
            let f = Arc::clone(&family);
            self.inner.pool.submit(move || f.run_worker());
        }
    }

    fn release_place(&self, place: &Place) {
        if !place.exclusive {
            return;
        }
        let next = {
            let mut queues = self.inner.exclusive.lock().unwrap();
            let queue = queues.entry(place.resource.clone()).or_default();
            let next = queue.waiting.pop_front();
            if next.is_none() {
                queue.busy = false;
            }
            next
        };
        if let Some(family) = next {
            self.start_workers(family);
        }
    }
}

impl Spawner for Runtime {
    fn spawn(&self, desc: FamilyDescriptor) -> Result<FamilyHandle, CreateError> {
        self.create(desc)
    }

    fn resolve_place(&self, name: &str) -> Option<Place> {
        (name == "local" || name == Place::DEFAULT_RESOURCE).then(Place::local)
    }
}

impl fmt::Debug for Runtime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Runtime")
            .field("node_id", &self.inner.node_id)
            .finish_non_exhaustive()
    }
}

/// Spawner used under the sequential schedule: every nested create runs to
/// completion before it returns.
struct SequentialSpawner {
    runtime: Runtime,
}

impl Spawner for SequentialSpawner {
    fn spawn(&self, desc: FamilyDescriptor) -> Result<FamilyHandle, CreateError> {
        let family = self.runtime.sequential_family(desc)?;
        Ok(FamilyHandle::new(family))
    }

    fn resolve_place(&self, _name: &str) -> Option<Place> {
        Some(Place::local())
    }
}

#[derive(Default)]
struct FamilyState {
    kill_cause: Option<KillCause>,
    failure: Option<(FailureKind, String)>,
    children: Vec<KillHandle>,
    outcome: Option<SyncResult>,
    hooks: Vec<CompletionHook>,
}

pub(crate) struct Family {
    pub(super) fid: FamilyId,
    pub(super) function: Arc<ThreadFunction>,
    pub(super) range: RangeSpec,
    pub(super) count: u64,
    block: u64,
    pub(super) arity: usize,
    // (count + 1) rows of `arity` cells. Row 0 holds the parent's initials,
    // row k+1 is written by the thread at position k.
    shared_cells: Vec<ChannelCell>,
    pub(super) global_cells: Vec<ChannelCell>,
    killed: AtomicBool,
    state: Mutex<FamilyState>,
    done: Condvar,
    nap: Mutex<()>,
    nap_cv: Condvar,
    next_pos: AtomicU64,
    active: AtomicUsize,
    pub(super) spawner: Arc<dyn Spawner>,
    runtime: Runtime,
    place: Place,
    pub(super) sequential: bool,
}

impl Family {
    pub(super) fn killed(&self) -> bool {
        self.killed.load(Ordering::SeqCst)
    }

    pub(super) fn shared_cell(&self, row: u64, channel: usize) -> &ChannelCell {
        &self.shared_cells[row as usize * self.arity + channel]
    }

    fn run_worker(self: Arc<Self>) {
        loop {
            if self.killed() {
                break;
            }
            let claimed = self
                .next_pos
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |p| (p < self.count).then_some(p + 1));
            match claimed {
                Ok(pos) => self.run_thread(pos),
                Err(_) => break,
            }
        }
        self.worker_exit();
    }

    fn worker_exit(&self) {
        if self.active.fetch_sub(1, Ordering::SeqCst) == 1 {
            self.finalize();
        }
    }

    fn run_thread(self: &Arc<Self>, pos: u64) {
        let index = self.range.index_at(pos);
        let mut ctx = ThreadContext::new(self, pos, index);
        let body = self.function.body();
        let outcome = catch_unwind(AssertUnwindSafe(|| {
            body(&mut ctx)?;
            ctx.forward_unwritten()
        }));
        match outcome {
            Ok(Ok(())) => {}
            Ok(Err(ThreadError::Killed | ThreadError::Broken)) if self.killed() => {}
            Ok(Err(e)) => self.abort(
                None,
                Some((FailureKind::RemoteError, format!("thread {index}: {e}"))),
            ),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| panic.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "non-string panic".to_owned());
                self.abort(
                    None,
                    Some((FailureKind::RemoteError, format!("thread {index} panicked: {msg}"))),
                )
            }
        }
    }

    /// Sets the kill flag and propagates the kill to every child. The first
    /// cause and the first failure recorded win. No-op once terminated.
    pub(super) fn abort(&self, cause: Option<KillCause>, failure: Option<(FailureKind, String)>) {
        let children = {
            let mut st = self.state.lock().unwrap();
            if st.outcome.is_some() {
                return;
            }
            if st.failure.is_none() {
                st.failure = failure;
            }
            if st.kill_cause.is_none() {
                st.kill_cause = cause;
            }
            if self.killed.swap(true, Ordering::SeqCst) {
                return;
            }
            st.children.clone()
        };
        for cell in self.shared_cells.iter().chain(&self.global_cells) {
            cell.wake();
        }
        {
            let _nap = self.nap.lock().unwrap();
            self.nap_cv.notify_all();
        }
        for child in children {
            child.kill_with(KillCause::Requested);
        }
    }

    /// Records a child created by one of this family's threads. Returns
    /// false (and kills the child) if this family is already being killed.
    pub(super) fn adopt(&self, child: KillHandle) -> bool {
        let mut st = self.state.lock().unwrap();
        if st.children.len() >= CHILD_PRUNE_THRESHOLD {
            st.children.retain(|c| !c.is_finished());
        }
        st.children.push(child.clone());
        let killed = self.killed();
        drop(st);
        if killed {
            child.kill_with(KillCause::Requested);
        }
        !killed
    }

    /// Cancellable sleep used by [`ThreadContext::sleep`].
    pub(super) fn nap(&self, duration: Duration) -> bool {
        let deadline = std::time::Instant::now() + duration;
        let mut guard = self.nap.lock().unwrap();
        loop {
            if self.killed() {
                return false;
            }
            let now = std::time::Instant::now();
            if now >= deadline {
                return true;
            }
            guard = self.nap_cv.wait_timeout(guard, deadline - now).unwrap().0;
        }
    }

    fn finalize(&self) {
        // A family terminates only after all of its children have, so that
        // no descendant can still write memory the parent observes.
        let children = self.state.lock().unwrap().children.clone();
        for child in &children {
            child.wait_finished();
        }
        let (result, hooks) = {
            let mut st = self.state.lock().unwrap();
            let status = if let Some((kind, detail)) = st.failure.clone() {
                SyncStatus::Failed { kind, detail }
            } else if let Some(cause) = st.kill_cause {
                SyncStatus::Killed(cause)
            } else {
                SyncStatus::Completed
            };
            let result = if status.is_completed() {
                let last = self.count;
                let finals = (0..self.arity)
                    .map(|c| {
                        self.shared_cell(last, c)
                            .try_read()
                            .expect("every thread writes or forwards each shared channel")
                    })
                    .collect();
                SyncResult::completed(finals)
            } else {
                SyncResult::unsuccessful(status)
            };
            st.outcome = Some(result.clone());
            st.children.clear();
            (result, std::mem::take(&mut st.hooks))
        };
        debug!("family {} finished: {}", self.fid, result.status);
        if !self.sequential {
            self.runtime.release_place(&self.place);
        }
        self.done.notify_all();
        for hook in hooks {
            hook(&result);
        }
    }
}

impl FamilyControl for Family {
    fn fid(&self) -> &FamilyId {
        &self.fid
    }

    fn wait(&self) -> SyncResult {
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(result) = &st.outcome {
                return result.clone();
            }
            st = self.done.wait(st).unwrap();
        }
    }

    fn kill(&self, cause: KillCause) {
        self.abort(Some(cause), None);
    }

    fn is_finished(&self) -> bool {
        self.state.lock().unwrap().outcome.is_some()
    }
}

impl Drop for Family {
    fn drop(&mut self) {
        let st = self.state.get_mut().unwrap_or_else(|e| e.into_inner());
        if st.outcome.is_none() && self.count > 0 && !self.sequential {
            warn!("family {} dropped before terminating", self.fid);
        }
    }
}
