//! A node: the local engine plus a place table, outbound connections to
//! other nodes and, optionally, a daemon accepting their creates.
//!
//! [`Node::create`] routes by place. A local place goes straight to the
//! engine without any serialization. A remote place describes the inputs,
//! sends one Create frame and returns; the caller blocks only at sync, which
//! resolves when the node answers with a Sync frame.

mod config;
mod daemon;
mod remote;

use std::collections::HashMap;
use std::fmt;
use std::io;
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use log::debug;

pub use config::{ConfigError, NodeConfig, PlaceEntry, LISTEN_ENV, LOCAL_PLACE};
pub use daemon::{Daemon, MAX_INBOUND_BUFFER};

use crate::datadesc::{extract_inputs, ArgEnv};
use crate::fault::{RetryPolicy, Timer, Watchdog};
use crate::svp::{
    CreateError, FailureKind, FamilyDescriptor, FamilyHandle, NodeAddr, Place, RegistryError, Runtime, Spawner,
    SyncResult, ThreadFunction,
};
use crate::value::ChannelValue;
use crate::wire::{encode_message, ChannelRecord, CreateBody, MessageKind, PlaceSpec, TypeRegistry, WireMessage};
use remote::{Connection, RemoteFamily};

/// Opens transport connections to other nodes.
pub trait Connector: Send + Sync {
    fn connect(&self, endpoint: &str, timeout: Duration) -> io::Result<TcpStream>;
}

/// Plain TCP with Nagle disabled.
#[derive(Debug, Default, Clone, Copy)]
pub struct TcpConnector;

impl Connector for TcpConnector {
    fn connect(&self, endpoint: &str, timeout: Duration) -> io::Result<TcpStream> {
        let mut last = io::Error::new(io::ErrorKind::NotFound, format!("{endpoint} resolves to no address"));
        for addr in endpoint.to_socket_addrs()? {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    return Ok(stream);
                }
                Err(e) => last = e,
            }
        }
        Err(last)
    }
}

/// Frames sent and received by a node, per message kind.
#[derive(Debug, Default)]
pub struct WireStats {
    sent: [AtomicU64; 3],
    received: [AtomicU64; 3],
}

fn kind_index(kind: MessageKind) -> usize {
    kind.code() as usize - 1
}

impl WireStats {
    pub fn sent(&self, kind: MessageKind) -> u64 {
        self.sent[kind_index(kind)].load(Ordering::SeqCst)
    }

    pub fn received(&self, kind: MessageKind) -> u64 {
        self.received[kind_index(kind)].load(Ordering::SeqCst)
    }

    pub(crate) fn record_sent(&self, kind: MessageKind) {
        self.sent[kind_index(kind)].fetch_add(1, Ordering::SeqCst);
    }

    pub(crate) fn record_received(&self, kind: MessageKind) {
        self.received[kind_index(kind)].fetch_add(1, Ordering::SeqCst);
    }
}

#[derive(Clone)]
pub struct Node {
    inner: Arc<NodeInner>,
}

struct NodeInner {
    places: Vec<PlaceEntry>,
    runtime: Runtime,
    types: Arc<TypeRegistry>,
    retry: RetryPolicy,
    connector: Arc<dyn Connector>,
    connections: Arc<Mutex<HashMap<String, Arc<Connection>>>>,
    stats: Arc<WireStats>,
    timer: Timer,
    watchdog: Watchdog,
    inbound_active: AtomicUsize,
    max_inbound: Option<usize>,
}

impl Node {
    pub fn new(config: &NodeConfig) -> Node {
        Node::with_parts(config, TypeRegistry::standard(), Arc::new(TcpConnector))
    }

    pub fn with_parts(config: &NodeConfig, types: TypeRegistry, connector: Arc<dyn Connector>) -> Node {
        let timer = Timer::new();
        Node {
            inner: Arc::new(NodeInner {
                places: config.places.clone(),
                runtime: Runtime::new(&config.node_id),
                types: Arc::new(types),
                retry: config.retry.clone(),
                connector,
                connections: Arc::new(Mutex::new(HashMap::new())),
                stats: Arc::new(WireStats::default()),
                watchdog: Watchdog::with_timer(timer.clone(), config.watchdog_grace),
                timer,
                inbound_active: AtomicUsize::new(0),
                max_inbound: config.max_inbound,
            }),
        }
    }

    pub fn id(&self) -> &str {
        self.inner.runtime.node_id()
    }

    pub fn runtime(&self) -> &Runtime {
        &self.inner.runtime
    }

    pub fn register(&self, function: ThreadFunction) -> Result<(), RegistryError> {
        self.inner.runtime.register(function)
    }

    pub fn types(&self) -> &TypeRegistry {
        &self.inner.types
    }

    pub fn stats(&self) -> &WireStats {
        &self.inner.stats
    }

    pub fn watchdog(&self) -> &Watchdog {
        &self.inner.watchdog
    }

    pub fn retry_policy(&self) -> &RetryPolicy {
        &self.inner.retry
    }

    pub fn place(&self, name: &str) -> Option<Place> {
        self.inner
            .places
            .iter()
            .find(|p| p.name == name)
            .map(|p| p.place.clone())
    }

    pub fn place_names(&self) -> Vec<String> {
        self.inner.places.iter().map(|p| p.name.clone()).collect()
    }

    /// Creates a family on the place named by `desc`, with the node's
    /// default retry policy.
    pub fn create(&self, desc: FamilyDescriptor) -> Result<FamilyHandle, CreateError> {
        let policy = self.inner.retry.clone();
        self.create_with_retry(desc, &policy)
    }

    pub fn create_with_retry(&self, desc: FamilyDescriptor, policy: &RetryPolicy) -> Result<FamilyHandle, CreateError> {
        match desc.place.node.clone() {
            NodeAddr::Local => {
                let fid = self.inner.runtime.next_fid();
                self.inner.runtime.start_family(desc, fid, self.spawner(), None)
            }
            NodeAddr::Remote(endpoint) => self.remote_create(desc, &endpoint, policy),
        }
    }

    pub fn run_sequential(&self, desc: FamilyDescriptor) -> Result<SyncResult, CreateError> {
        self.inner.runtime.run_sequential(desc)
    }

    /// Closes every outbound connection; the next remote create reconnects.
    pub fn drop_connections(&self) {
        let conns: Vec<_> = self.inner.connections.lock().unwrap().drain().map(|(_, c)| c).collect();
        for c in conns {
            c.close();
        }
    }

    /// Starts accepting creates from other nodes on `addr`.
    pub fn serve(&self, addr: &str) -> io::Result<Daemon> {
        Daemon::start(self.clone(), addr)
    }

    fn spawner(&self) -> Arc<dyn Spawner> {
        Arc::new(self.clone())
    }

    fn remote_create(
        &self,
        desc: FamilyDescriptor,
        endpoint: &str,
        policy: &RetryPolicy,
    ) -> Result<FamilyHandle, CreateError> {
        let inner = &self.inner;
        let function = inner
            .runtime
            .functions()
            .get(&desc.function)
            .ok_or_else(|| CreateError::UnknownFunction(desc.function.clone()))?;
        let description = function
            .description()
            .ok_or_else(|| CreateError::NotDistributable(desc.function.clone()))?;
        desc.range.thread_count()?;
        function.check_args(&desc.shareds, &desc.globals)?;
        if let Some(i) = desc.shareds.iter().position(|v| matches!(v, ChannelValue::Buffer(_))) {
            return Err(CreateError::SharedBufferNotDistributable(i));
        }

        let env = ArgEnv::new(desc.shareds.clone(), desc.globals.clone());
        let ts = description.describe(&env)?;
        let input = extract_inputs(&ts, &env, &inner.types)?;
        let fid = inner.runtime.next_fid();
        let body = CreateBody {
            fid: fid.clone(),
            function: desc.function.clone(),
            place: PlaceSpec {
                resource: desc.place.resource.clone(),
                exclusive: desc.place.exclusive,
            },
            range: desc.range,
            shareds: desc.shareds.iter().map(channel_record).collect(),
            globals: desc.globals.iter().map(channel_record).collect(),
            input,
        };
        let frame = encode_message(&inner.types, &WireMessage::Create(body))?;

        let record = Arc::new(RemoteFamily::new(
            fid,
            endpoint,
            ts,
            env,
            Arc::clone(&inner.types),
            Arc::clone(&inner.stats),
        ));
        let handle = FamilyHandle::new(record.clone());
        match self.connection(endpoint, policy) {
            Err(detail) => {
                record.fail(FailureKind::ConnectRefused, detail);
                return Ok(handle);
            }
            Ok(conn) => {
                record.attach(&conn);
                if !conn.register(Arc::clone(&record)) {
                    record.fail(FailureKind::ConnectionLost, format!("connection to {endpoint} closed"));
                    return Ok(handle);
                }
                inner.stats.record_sent(MessageKind::Create);
                if let Err(e) = conn.send(&frame) {
                    conn.close();
                    record.fail(FailureKind::ConnectionLost, format!("sending to {endpoint}: {e}"));
                    return Ok(handle);
                }
            }
        }
        if let Some(deadline) = policy.overall_deadline {
            let record = Arc::clone(&record);
            inner.timer.schedule(None, deadline, move |_| record.time_out());
        }
        Ok(handle)
    }

    fn connection(&self, endpoint: &str, policy: &RetryPolicy) -> Result<Arc<Connection>, String> {
        let inner = &self.inner;
        if let Some(c) = inner.connections.lock().unwrap().get(endpoint) {
            if c.is_open() {
                return Ok(Arc::clone(c));
            }
        }
        let attempts = policy.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            std::thread::sleep(policy.delay_before(attempt));
            match inner.connector.connect(endpoint, policy.connect_timeout) {
                Ok(stream) => {
                    let conn = Connection::start(
                        stream,
                        endpoint,
                        Arc::clone(&inner.types),
                        Arc::clone(&inner.stats),
                        Arc::downgrade(&inner.connections),
                    )
                    .map_err(|e| format!("{endpoint}: {e}"))?;
                    let mut map = inner.connections.lock().unwrap();
                    if let Some(existing) = map.get(endpoint) {
                        if existing.is_open() {
                            let existing = Arc::clone(existing);
                            drop(map);
                            conn.close();
                            return Ok(existing);
                        }
                    }
                    map.insert(endpoint.to_owned(), Arc::clone(&conn));
                    return Ok(conn);
                }
                Err(e) => {
                    debug!("connect {endpoint} attempt {attempt}/{attempts}: {e}");
                    last = e.to_string();
                }
            }
        }
        Err(format!("{endpoint}: {attempts} connection attempts failed, last: {last}"))
    }
}

impl Spawner for Node {
    fn spawn(&self, desc: FamilyDescriptor) -> Result<FamilyHandle, CreateError> {
        self.create(desc)
    }

    fn resolve_place(&self, name: &str) -> Option<Place> {
        self.place(name)
    }
}

impl fmt::Debug for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Node")
            .field("id", &self.id())
            .field("places", &self.place_names())
            .finish_non_exhaustive()
    }
}

fn channel_record(v: &ChannelValue) -> ChannelRecord {
    match v {
        ChannelValue::Scalar(v) => ChannelRecord::Scalar(v.clone()),
        ChannelValue::Buffer(b) => ChannelRecord::BufferRef {
            element_type: b.element_type(),
            len: b.len() as u32,
        },
    }
}
