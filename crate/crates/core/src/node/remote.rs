use std::collections::HashMap;
use std::io::{BufReader, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::thread;

use log::{debug, warn};

use super::WireStats;
use crate::datadesc::{apply_outputs, ArgEnv, TransferSet};
use crate::svp::{FailureKind, FamilyControl, FamilyId, KillCause, SyncResult, SyncStatus};
use crate::value::ChannelValue;
use crate::wire::{
    decode_message, encode_message, read_frame, ChannelRecord, KillBody, MessageKind, SyncBody, TypeRegistry,
    WireMessage,
};

type ConnectionMap = Mutex<HashMap<String, Arc<Connection>>>;

/// One multiplexed connection to another node's daemon.
pub(crate) struct Connection {
    endpoint: String,
    writer: Mutex<TcpStream>,
    control: TcpStream,
    open: AtomicBool,
    // None once the connection is closed.
    pending: Mutex<Option<HashMap<FamilyId, Arc<RemoteFamily>>>>,
}

impl Connection {
    pub(crate) fn start(
        stream: TcpStream,
        endpoint: &str,
        types: Arc<TypeRegistry>,
        stats: Arc<WireStats>,
        registry: Weak<ConnectionMap>,
    ) -> std::io::Result<Arc<Connection>> {
        let reader = stream.try_clone()?;
        let control = stream.try_clone()?;
        let conn = Arc::new(Connection {
            endpoint: endpoint.to_owned(),
            writer: Mutex::new(stream),
            control,
            open: AtomicBool::new(true),
            pending: Mutex::new(Some(HashMap::new())),
        });
        let c = Arc::clone(&conn);
        thread::Builder::new()
            .name(format!("dsvp-client-{endpoint}"))
            .spawn(move || c.read_loop(reader, types, stats, registry))?;
        Ok(conn)
    }

    pub(crate) fn is_open(&self) -> bool {
        self.open.load(Ordering::SeqCst)
    }

    pub(crate) fn register(&self, record: Arc<RemoteFamily>) -> bool {
        match self.pending.lock().unwrap().as_mut() {
            Some(map) => {
                map.insert(record.fid.clone(), record);
                true
            }
            None => false,
        }
    }

    pub(crate) fn send(&self, frame: &[u8]) -> std::io::Result<()> {
        self.writer.lock().unwrap().write_all(frame)
    }

    pub(crate) fn close(&self) {
        self.open.store(false, Ordering::SeqCst);
        let _ = self.control.shutdown(Shutdown::Both);
    }

    fn read_loop(
        self: Arc<Self>,
        stream: TcpStream,
        types: Arc<TypeRegistry>,
        stats: Arc<WireStats>,
        registry: Weak<ConnectionMap>,
    ) {
        let mut reader = BufReader::new(stream);
        let reason = loop {
            let frame = match read_frame(&mut reader) {
                Ok(Some(frame)) => frame,
                Ok(None) => break "closed by peer".to_owned(),
                Err(e) => break e.to_string(),
            };
            match decode_message(&types, &frame) {
                Ok(WireMessage::Sync(body)) => {
                    stats.record_received(MessageKind::Sync);
                    let record = self.pending.lock().unwrap().as_mut().and_then(|m| m.remove(&body.fid));
                    match record {
                        Some(r) => r.on_sync(body),
                        None => debug!("sync for unknown family {} from {}", body.fid, self.endpoint),
                    }
                }
                Ok(other) => {
                    stats.record_received(other.kind());
                    warn!("unexpected {:?} frame from {}", other.kind(), self.endpoint);
                }
                Err(e) => break format!("malformed frame: {e}"),
            }
        };
        self.close();
        let orphans = self.pending.lock().unwrap().take().unwrap_or_default();
        if !orphans.is_empty() {
            warn!("connection to {} lost ({reason}); failing {} families", self.endpoint, orphans.len());
        }
        for record in orphans.into_values() {
            record.fail(
                FailureKind::ConnectionLost,
                format!("connection to {} lost: {reason}", self.endpoint),
            );
        }
        if let Some(map) = registry.upgrade() {
            let mut map = map.lock().unwrap();
            if map.get(&self.endpoint).is_some_and(|c| Arc::ptr_eq(c, &self)) {
                map.remove(&self.endpoint);
            }
        }
    }
}

/// Caller-side record of a family running on another node.
pub(crate) struct RemoteFamily {
    fid: FamilyId,
    endpoint: String,
    ts: TransferSet,
    types: Arc<TypeRegistry>,
    stats: Arc<WireStats>,
    state: Mutex<RemoteState>,
    done: Condvar,
}

struct RemoteState {
    caller: Option<ArgEnv>,
    outcome: Option<SyncResult>,
    conn: Weak<Connection>,
}

impl RemoteFamily {
    pub(crate) fn new(
        fid: FamilyId,
        endpoint: &str,
        ts: TransferSet,
        caller: ArgEnv,
        types: Arc<TypeRegistry>,
        stats: Arc<WireStats>,
    ) -> RemoteFamily {
        RemoteFamily {
            fid,
            endpoint: endpoint.to_owned(),
            ts,
            types,
            stats,
            state: Mutex::new(RemoteState {
                caller: Some(caller),
                outcome: None,
                conn: Weak::new(),
            }),
            done: Condvar::new(),
        }
    }

    pub(crate) fn attach(&self, conn: &Arc<Connection>) {
        self.state.lock().unwrap().conn = Arc::downgrade(conn);
    }

    // First resolution wins; later ones are dropped.
    fn resolve(&self, st: &mut RemoteState, result: SyncResult) -> bool {
        if st.outcome.is_some() {
            return false;
        }
        st.caller = None;
        st.outcome = Some(result);
        self.done.notify_all();
        true
    }

    pub(crate) fn fail(&self, kind: FailureKind, detail: String) {
        let mut st = self.state.lock().unwrap();
        self.resolve(&mut st, SyncResult::failed(kind, detail));
    }

    /// Overall deadline expiry.
    pub(crate) fn time_out(&self) {
        self.resolve_and_kill(SyncResult::unsuccessful(SyncStatus::TimedOut));
    }

    fn on_sync(&self, body: SyncBody) {
        let mut st = self.state.lock().unwrap();
        if st.outcome.is_some() {
            debug!("discarding late sync for {} ({})", self.fid, body.status);
            return;
        }
        let result = if body.status.is_completed() {
            self.complete(&mut st, body)
        } else {
            SyncResult::unsuccessful(body.status)
        };
        self.resolve(&mut st, result);
    }

    fn complete(&self, st: &mut RemoteState, body: SyncBody) -> SyncResult {
        let mut finals = Vec::with_capacity(body.shareds.len());
        for r in body.shareds {
            match r {
                ChannelRecord::Scalar(v) => finals.push(ChannelValue::Scalar(v)),
                ChannelRecord::BufferRef { .. } => {
                    return SyncResult::failed(FailureKind::RemoteError, "sync carries a buffer as a shared value")
                }
            }
        }
        let env = st.caller.as_mut().expect("caller arguments kept until resolution");
        match apply_outputs(&self.ts, &body.output, env, &self.types) {
            Ok(()) => SyncResult::completed(finals),
            Err(e) => SyncResult::failed(FailureKind::RemoteError, format!("applying outputs: {e}")),
        }
    }

    // The Kill is counted before the caller can observe the resolution.
    fn resolve_and_kill(&self, result: SyncResult) {
        let (conn, frame) = {
            let mut st = self.state.lock().unwrap();
            if st.outcome.is_some() {
                return;
            }
            let Some(conn) = st.conn.upgrade() else {
                self.resolve(&mut st, result);
                return;
            };
            let msg = WireMessage::Kill(KillBody { fid: self.fid.clone() });
            let frame = encode_message(&self.types, &msg).expect("kill frames always encode");
            self.stats.record_sent(MessageKind::Kill);
            self.resolve(&mut st, result);
            (conn, frame)
        };
        if let Err(e) = conn.send(&frame) {
            debug!("kill {} to {} not delivered: {e}", self.fid, self.endpoint);
        }
    }
}

impl FamilyControl for RemoteFamily {
    fn fid(&self) -> &FamilyId {
        &self.fid
    }

    fn wait(&self) -> SyncResult {
        let mut st = self.state.lock().unwrap();
        loop {
            if let Some(r) = &st.outcome {
                return r.clone();
            }
            st = self.done.wait(st).unwrap();
        }
    }

    /// Marks the record killed at once and sends a single Kill frame. The
    /// Sync the node later sends for this family is discarded.
    fn kill(&self, cause: KillCause) {
        self.resolve_and_kill(SyncResult::unsuccessful(SyncStatus::Killed(cause)));
    }

    fn is_finished(&self) -> bool {
        self.state.lock().unwrap().outcome.is_some()
    }
}
