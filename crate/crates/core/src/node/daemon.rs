use std::collections::HashMap;
use std::io::{self, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use log::{debug, info, warn};

use super::Node;
use crate::datadesc::{apply_inputs, extract_outputs, ArgEnv};
use crate::svp::{FailureKind, FamilyDescriptor, FamilyId, KillHandle, NodeAddr, Place, SyncResult};
use crate::value::{Buffer, ChannelValue};
use crate::wire::{
    decode_message, encode_message, read_frame, ChannelRecord, CreateBody, MessageKind, SyncBody, TypeRegistry,
    WireError, WireMessage,
};

/// Accepts connections from other nodes and runs the families they create.
///
/// Dropping the daemon stops accepting, closes every inbound connection and
/// kills the families those connections created.
pub struct Daemon {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    peers: Arc<Mutex<Vec<TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl Daemon {
    pub(super) fn start(node: Node, addr: &str) -> io::Result<Daemon> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let peers = Arc::new(Mutex::new(Vec::new()));
        let accept = {
            let (stop, peers) = (Arc::clone(&stop), Arc::clone(&peers));
            thread::Builder::new()
                .name(format!("dsvp-accept-{}", addr.port()))
                .spawn(move || accept_loop(node, listener, stop, peers))?
        };
        info!("listening on {addr}");
        Ok(Daemon {
            addr,
            stop,
            peers,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// The endpoint other nodes put in their place tables.
    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    /// Blocks until the daemon is shut down from another thread.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(self) {}
}

impl Drop for Daemon {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock accept().
        let _ = TcpStream::connect(self.addr);
        for peer in self.peers.lock().unwrap().drain(..) {
            let _ = peer.shutdown(Shutdown::Both);
        }
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn accept_loop(node: Node, listener: TcpListener, stop: Arc<AtomicBool>, peers: Arc<Mutex<Vec<TcpStream>>>) {
    let mut next = 0u64;
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept: {e}");
                continue;
            }
        };
        next += 1;
        let peer = stream.peer_addr().map_or_else(|_| "?".to_owned(), |a| a.to_string());
        match stream.try_clone() {
            Ok(s) => {
                let mut peers = peers.lock().unwrap();
                peers.retain(|p| p.peer_addr().is_ok());
                peers.push(s);
            }
            Err(e) => warn!("connection from {peer}: {e}"),
        }
        let node = node.clone();
        let spawned = thread::Builder::new()
            .name(format!("dsvp-peer-{next}"))
            .spawn(move || {
                if let Err(e) = serve_connection(&node, stream, &peer) {
                    warn!("connection from {peer}: {e}");
                }
            });
        if let Err(e) = spawned {
            warn!("cannot serve connection: {e}");
        }
    }
}

/// Largest buffer, in elements, an inbound create may ask this node to allocate.
pub const MAX_INBOUND_BUFFER: u32 = 1 << 24;

type Inbound = Arc<Mutex<HashMap<FamilyId, KillHandle>>>;

struct Peer {
    writer: Mutex<TcpStream>,
    types: Arc<TypeRegistry>,
    node: Node,
    name: String,
}

impl Peer {
    fn send_sync(&self, body: SyncBody) {
        let fid = body.fid.clone();
        let frame = match encode_message(&self.types, &WireMessage::Sync(body)) {
            Ok(f) => f,
            Err(e) => {
                warn!("encoding sync for {fid}: {e}");
                let fallback = failed_sync(fid.clone(), format!("encoding sync: {e}"));
                match encode_message(&self.types, &WireMessage::Sync(fallback)) {
                    Ok(f) => f,
                    Err(_) => return,
                }
            }
        };
        self.node.stats().record_sent(MessageKind::Sync);
        if let Err(e) = self.writer.lock().unwrap().write_all(&frame) {
            debug!("sync for {fid} to {} not delivered: {e}", self.name);
        }
    }
}

fn failed_sync(fid: FamilyId, detail: String) -> SyncBody {
    SyncBody {
        fid,
        status: SyncResult::failed(FailureKind::RemoteError, detail).status,
        shareds: Vec::new(),
        output: Vec::new(),
    }
}

fn serve_connection(node: &Node, stream: TcpStream, name: &str) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let peer = Arc::new(Peer {
        writer: Mutex::new(stream.try_clone()?),
        types: Arc::clone(&node.inner.types),
        node: node.clone(),
        name: name.to_owned(),
    });
    let inbound: Inbound = Arc::new(Mutex::new(HashMap::new()));
    let mut reader = BufReader::new(stream.try_clone()?);
    let result = loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => break Ok(()),
            Err(e) => break Err(io::Error::other(e.to_string())),
        };
        let msg = match decode_message(&peer.types, &frame) {
            Ok(m) => m,
            Err(e) => break Err(io::Error::other(format!("malformed frame: {e}"))),
        };
        node.stats().record_received(msg.kind());
        match msg {
            WireMessage::Create(body) => handle_create(&peer, &inbound, body),
            WireMessage::Kill(body) => {
                let target = inbound.lock().unwrap().get(&body.fid).cloned();
                match target {
                    Some(k) => k.kill(),
                    None => debug!("kill for unknown or finished family {}", body.fid),
                }
            }
            WireMessage::Sync(body) => warn!("unexpected sync for {} from {name}", body.fid),
        }
    };
    // Nobody is left to sync these families.
    let orphans: Vec<KillHandle> = inbound.lock().unwrap().drain().map(|(_, k)| k).collect();
    if !orphans.is_empty() {
        info!("{name} disconnected; killing {} families", orphans.len());
    }
    for k in orphans {
        k.kill();
    }
    let _ = stream.shutdown(Shutdown::Both);
    result
}

fn decode_args(types: &TypeRegistry, records: Vec<ChannelRecord>) -> Result<Vec<ChannelValue>, WireError> {
    records
        .into_iter()
        .map(|r| match r {
            ChannelRecord::Scalar(v) => Ok(ChannelValue::Scalar(v)),
            ChannelRecord::BufferRef { element_type, len } => {
                if len > MAX_INBOUND_BUFFER {
                    return Err(WireError::ValueOutOfRange(format!(
                        "buffer of {len} elements exceeds the limit of {MAX_INBOUND_BUFFER}"
                    )));
                }
                let zero = types.zero_value(element_type)?;
                Ok(ChannelValue::Buffer(Buffer::filled(len as usize, zero)))
            }
        })
        .collect()
}

fn handle_create(peer: &Arc<Peer>, inbound: &Inbound, body: CreateBody) {
    let node = &peer.node;
    let fid = body.fid.clone();
    let reject = |detail: String| {
        debug!("rejecting {fid}: {detail}");
        peer.send_sync(failed_sync(fid.clone(), detail));
    };

    let active = node.inner.inbound_active.fetch_add(1, Ordering::SeqCst);
    let release = || {
        node.inner.inbound_active.fetch_sub(1, Ordering::SeqCst);
    };
    if node.inner.max_inbound.is_some_and(|max| active >= max) {
        release();
        return reject(format!("node {} is at its limit of inbound families", node.id()));
    }
    let Some(function) = node.runtime().functions().get(&body.function) else {
        release();
        return reject(format!("unknown thread function {:?}", body.function));
    };
    let Some(description) = function.description() else {
        release();
        return reject(format!("thread function {:?} is not distributable", body.function));
    };
    let args = decode_args(&peer.types, body.shareds).and_then(|s| Ok((s, decode_args(&peer.types, body.globals)?)));
    let (shareds, globals) = match args {
        Ok(a) => a,
        Err(e) => {
            release();
            return reject(format!("arguments: {e}"));
        }
    };
    let mut env = ArgEnv::new(shareds, globals);
    if let Err(e) = apply_inputs(&body.input, &mut env, &peer.types) {
        release();
        return reject(format!("inputs: {e}"));
    }
    let ts = match description.describe(&env) {
        Ok(ts) => ts,
        Err(e) => {
            release();
            return reject(format!("describing: {e}"));
        }
    };
    let (shareds, globals) = env.into_parts();
    let desc = FamilyDescriptor {
        place: Place {
            node: NodeAddr::Local,
            resource: body.place.resource,
            exclusive: body.place.exclusive,
        },
        range: body.range,
        function: body.function,
        shareds,
        globals: globals.clone(),
    };

    let hook = {
        let peer = Arc::clone(peer);
        let inbound = Arc::clone(inbound);
        let fid = fid.clone();
        Box::new(move |result: &SyncResult| {
            inbound.lock().unwrap().remove(&fid);
            let mut body = SyncBody {
                fid: fid.clone(),
                status: result.status.clone(),
                shareds: Vec::new(),
                output: Vec::new(),
            };
            if result.status.is_completed() {
                let after = ArgEnv::new(result.final_shareds.clone(), globals);
                match extract_outputs(&ts, &after, &peer.types) {
                    Ok(output) => {
                        body.shareds = result.final_shareds.iter().map(super::channel_record).collect();
                        body.output = output;
                    }
                    Err(e) => body = failed_sync(fid.clone(), format!("extracting outputs: {e}")),
                }
            }
            peer.node.inner.inbound_active.fetch_sub(1, Ordering::SeqCst);
            peer.send_sync(body);
        })
    };
    match node.runtime().start_family(desc, fid.clone(), node.spawner(), Some(hook)) {
        Ok(handle) => {
            let mut map = inbound.lock().unwrap();
            map.insert(fid.clone(), handle.killer());
            if handle.is_finished() {
                map.remove(&fid);
            }
        }
        Err(e) => {
            release();
            reject(e.to_string());
        }
    }
}
