use super::types::TypeRegistry;
use super::xdr::{Decoder, Encoder, HostOrder};
use super::{FrameHeader, WireError, HEADER_LEN, MAGIC, VERSION};
use crate::svp::{FailureKind, FamilyId, KillCause, RangeSpec, SyncStatus};
use crate::value::{TypeCode, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    Create = 1,
    Sync = 2,
    Kill = 3,
}

impl MessageKind {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<MessageKind, WireError> {
        match code {
            1 => Ok(MessageKind::Create),
            2 => Ok(MessageKind::Sync),
            3 => Ok(MessageKind::Kill),
            other => Err(WireError::UnknownKind(other)),
        }
    }
}

/// Place identification inside a Create: the resource tag on the receiving
/// node and whether it is exclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaceSpec {
    pub resource: String,
    pub exclusive: bool,
}

/// One channel value as it crosses the wire.
///
/// ```text
/// u32 0, u32 type code, value        scalar
/// u32 1, u32 element type, u32 len   buffer reference (extent only)
/// ```
///
/// A buffer reference carries no contents; the receiver allocates a zeroed
/// buffer of the same extent and the data description decides what gets
/// copied into it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChannelRecord {
    Scalar(Value),
    BufferRef { element_type: TypeCode, len: u32 },
}

/// ```text
/// FamilyId        string origin, u64 serial
/// string          function name
/// PlaceSpec       string resource, bool exclusive
/// RangeSpec       i64 start, i64 limit, i64 step, i64 block
/// u32 n, n × ChannelRecord   shared initials
/// u32 n, n × ChannelRecord   globals
/// opaque          input payload
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CreateBody {
    pub fid: FamilyId,
    pub function: String,
    pub place: PlaceSpec,
    pub range: RangeSpec,
    pub shareds: Vec<ChannelRecord>,
    pub globals: Vec<ChannelRecord>,
    pub input: Vec<u8>,
}

/// ```text
/// FamilyId        string origin, u64 serial
/// u32             status code
/// u32             failure kind (0 unless status is failed)
/// string          detail
/// u32 n, n × ChannelRecord   final shared values
/// opaque          output payload
/// ```
///
/// Status codes: 0 completed, 1 killed, 2 killed by break, 3 killed by
/// watchdog, 4 failed, 5 timed out. Failure kinds: 1 connect_refused,
/// 2 connection_lost, 3 timeout, 4 remote_error, 5 killed_by_watchdog.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncBody {
    pub fid: FamilyId,
    pub status: SyncStatus,
    pub shareds: Vec<ChannelRecord>,
    pub output: Vec<u8>,
}

/// ```text
/// FamilyId        string origin, u64 serial
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KillBody {
    pub fid: FamilyId,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Create(CreateBody),
    Sync(SyncBody),
    Kill(KillBody),
}

impl WireMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            WireMessage::Create(_) => MessageKind::Create,
            WireMessage::Sync(_) => MessageKind::Sync,
            WireMessage::Kill(_) => MessageKind::Kill,
        }
    }

    pub fn fid(&self) -> &FamilyId {
        match self {
            WireMessage::Create(b) => &b.fid,
            WireMessage::Sync(b) => &b.fid,
            WireMessage::Kill(b) => &b.fid,
        }
    }
}

/// Status codes on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WireStatus {
    Completed = 0,
    Killed = 1,
    Broken = 2,
    Watchdog = 3,
    Failed = 4,
    TimedOut = 5,
}

fn status_code(status: &SyncStatus) -> WireStatus {
    match status {
        SyncStatus::Completed => WireStatus::Completed,
        SyncStatus::Killed(KillCause::Requested) => WireStatus::Killed,
        SyncStatus::Killed(KillCause::Break) => WireStatus::Broken,
        SyncStatus::Killed(KillCause::Watchdog) => WireStatus::Watchdog,
        SyncStatus::Failed { .. } => WireStatus::Failed,
        SyncStatus::TimedOut => WireStatus::TimedOut,
    }
}

fn failure_code(kind: FailureKind) -> u32 {
    match kind {
        FailureKind::ConnectRefused => 1,
        FailureKind::ConnectionLost => 2,
        FailureKind::Timeout => 3,
        FailureKind::RemoteError => 4,
        FailureKind::KilledByWatchdog => 5,
    }
}

fn failure_from_code(code: u32) -> Result<FailureKind, WireError> {
    Ok(match code {
        1 => FailureKind::ConnectRefused,
        2 => FailureKind::ConnectionLost,
        3 => FailureKind::Timeout,
        4 => FailureKind::RemoteError,
        5 => FailureKind::KilledByWatchdog,
        code => {
            return Err(WireError::InvalidCode {
                field: "failure kind",
                code,
            })
        }
    })
}

// Smallest possible encodings, used to bound hostile counts.
const MIN_RECORD_LEN: usize = 12;

fn put_fid(e: &mut Encoder, fid: &FamilyId) -> Result<(), WireError> {
    e.put_string(&fid.origin)?;
    e.put_u64(fid.serial);
    Ok(())
}

fn get_fid(d: &mut Decoder<'_>) -> Result<FamilyId, WireError> {
    Ok(FamilyId {
        origin: d.get_string()?,
        serial: d.get_u64()?,
    })
}

fn put_records(e: &mut Encoder, types: &TypeRegistry, records: &[ChannelRecord]) -> Result<(), WireError> {
    let n = u32::try_from(records.len()).map_err(|_| WireError::TooLarge(records.len()))?;
    e.put_u32(n);
    for r in records {
        match r {
            ChannelRecord::Scalar(v) => {
                e.put_u32(0);
                e.put_u32(v.type_code().0);
                types.encode_into(e, v.type_code(), v)?;
            }
            ChannelRecord::BufferRef { element_type, len } => {
                types.get(*element_type)?;
                e.put_u32(1);
                e.put_u32(element_type.0);
                e.put_u32(*len);
            }
        }
    }
    Ok(())
}

fn get_records(d: &mut Decoder<'_>, types: &TypeRegistry) -> Result<Vec<ChannelRecord>, WireError> {
    let n = d.get_count(MIN_RECORD_LEN)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let record = match d.get_u32()? {
            0 => {
                let code = TypeCode(d.get_u32()?);
                ChannelRecord::Scalar(types.decode_from(d, code)?)
            }
            1 => {
                let element_type = TypeCode(d.get_u32()?);
                types.get(element_type)?;
                ChannelRecord::BufferRef {
                    element_type,
                    len: d.get_u32()?,
                }
            }
            code => {
                return Err(WireError::InvalidCode {
                    field: "channel record",
                    code,
                })
            }
        };
        out.push(record);
    }
    Ok(out)
}

fn encode_body(e: &mut Encoder, types: &TypeRegistry, msg: &WireMessage) -> Result<(), WireError> {
    match msg {
        WireMessage::Create(b) => {
            put_fid(e, &b.fid)?;
            e.put_string(&b.function)?;
            e.put_string(&b.place.resource)?;
            e.put_bool(b.place.exclusive);
            e.put_i64(b.range.start);
            e.put_i64(b.range.limit);
            e.put_i64(b.range.step);
            let block = i64::try_from(b.range.block)
                .map_err(|_| WireError::ValueOutOfRange(format!("block {}", b.range.block)))?;
            e.put_i64(block);
            put_records(e, types, &b.shareds)?;
            put_records(e, types, &b.globals)?;
            e.put_opaque(&b.input)?;
        }
        WireMessage::Sync(b) => {
            put_fid(e, &b.fid)?;
            e.put_u32(status_code(&b.status) as u32);
            match &b.status {
                SyncStatus::Failed { kind, detail } => {
                    e.put_u32(failure_code(*kind));
                    e.put_string(detail)?;
                }
                _ => {
                    e.put_u32(0);
                    e.put_string("")?;
                }
            }
            put_records(e, types, &b.shareds)?;
            e.put_opaque(&b.output)?;
        }
        WireMessage::Kill(b) => put_fid(e, &b.fid)?,
    }
    Ok(())
}

/// Encodes a message as one frame, converting from the given host order.
pub fn encode_message_with(types: &TypeRegistry, msg: &WireMessage, host: HostOrder) -> Result<Vec<u8>, WireError> {
    let mut body = Encoder::with_host_order(host);
    encode_body(&mut body, types, msg)?;
    let body = body.into_bytes();
    let len = u32::try_from(body.len()).map_err(|_| WireError::TooLarge(body.len()))?;
    let mut frame = Encoder::with_host_order(host);
    frame.put_u32(MAGIC);
    frame.put_raw(&[VERSION, msg.kind().code(), 0, 0]);
    frame.put_u32(len);
    frame.put_raw(&body);
    Ok(frame.into_bytes())
}

/// Encodes a message as one frame: header then body.
pub fn encode_message(types: &TypeRegistry, msg: &WireMessage) -> Result<Vec<u8>, WireError> {
    encode_message_with(types, msg, HostOrder::NATIVE)
}

/// Decodes exactly one complete frame.
pub fn decode_message(types: &TypeRegistry, frame: &[u8]) -> Result<WireMessage, WireError> {
    let header: &[u8; HEADER_LEN] = frame
        .get(..HEADER_LEN)
        .and_then(|h| h.try_into().ok())
        .ok_or(WireError::Truncated {
            needed: HEADER_LEN,
            available: frame.len(),
        })?;
    let header = FrameHeader::parse(header)?;
    let body = &frame[HEADER_LEN..];
    if body.len() != header.body_len as usize {
        return Err(WireError::LengthMismatch {
            declared: header.body_len as usize,
            actual: body.len(),
        });
    }
    let mut d = Decoder::new(body);
    let msg = match header.kind {
        MessageKind::Create => {
            let fid = get_fid(&mut d)?;
            let function = d.get_string()?;
            let place = PlaceSpec {
                resource: d.get_string()?,
                exclusive: d.get_bool()?,
            };
            let range = RangeSpec {
                start: d.get_i64()?,
                limit: d.get_i64()?,
                step: d.get_i64()?,
                block: {
                    let b = d.get_i64()?;
                    u64::try_from(b).map_err(|_| WireError::ValueOutOfRange(format!("block {b}")))?
                },
            };
            WireMessage::Create(CreateBody {
                fid,
                function,
                place,
                range,
                shareds: get_records(&mut d, types)?,
                globals: get_records(&mut d, types)?,
                input: d.get_opaque()?.to_vec(),
            })
        }
        MessageKind::Sync => {
            let fid = get_fid(&mut d)?;
            let code = d.get_u32()?;
            let kind = d.get_u32()?;
            let detail = d.get_string()?;
            let status = match code {
                0 => SyncStatus::Completed,
                1 => SyncStatus::Killed(KillCause::Requested),
                2 => SyncStatus::Killed(KillCause::Break),
                3 => SyncStatus::Killed(KillCause::Watchdog),
                4 => SyncStatus::Failed {
                    kind: failure_from_code(kind)?,
                    detail,
                },
                5 => SyncStatus::TimedOut,
                code => return Err(WireError::InvalidCode { field: "status", code }),
            };
            if code != 4 && kind != 0 {
                return Err(WireError::InvalidCode {
                    field: "failure kind",
                    code: kind,
                });
            }
            WireMessage::Sync(SyncBody {
                fid,
                status,
                shareds: get_records(&mut d, types)?,
                output: d.get_opaque()?.to_vec(),
            })
        }
        MessageKind::Kill => WireMessage::Kill(KillBody { fid: get_fid(&mut d)? }),
    };
    d.finish()?;
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fid() -> FamilyId {
        FamilyId {
            origin: "a".into(),
            serial: 7,
        }
    }

    #[test]
    fn kill_frame_is_minimal() {
        let types = TypeRegistry::standard();
        let frame = encode_message(&types, &WireMessage::Kill(KillBody { fid: fid() })).unwrap();
        assert_eq!(frame.len(), HEADER_LEN + 8 + 8);
        assert_eq!(&frame[..12], &[0x44, 0x53, 0x56, 0x50, 1, 3, 0, 0, 0, 0, 0, 16]);
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let types = TypeRegistry::standard();
        let mut frame = encode_message(&types, &WireMessage::Kill(KillBody { fid: fid() })).unwrap();
        frame[5] = 4;
        assert_eq!(decode_message(&types, &frame), Err(WireError::UnknownKind(4)));
    }

    #[test]
    fn length_must_match_exactly() {
        let types = TypeRegistry::standard();
        let mut frame = encode_message(&types, &WireMessage::Kill(KillBody { fid: fid() })).unwrap();
        frame.push(0);
        assert!(matches!(
            decode_message(&types, &frame),
            Err(WireError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn sync_failure_round_trip() {
        let types = TypeRegistry::standard();
        let msg = WireMessage::Sync(SyncBody {
            fid: fid(),
            status: SyncStatus::Failed {
                kind: FailureKind::RemoteError,
                detail: "boom".into(),
            },
            shareds: vec![],
            output: vec![],
        });
        let frame = encode_message(&types, &msg).unwrap();
        assert_eq!(decode_message(&types, &frame).unwrap(), msg);
    }

    #[test]
    fn failure_kind_on_non_failed_status_is_rejected() {
        let types = TypeRegistry::standard();
        let msg = WireMessage::Sync(SyncBody {
            fid: fid(),
            status: SyncStatus::Completed,
            shareds: vec![],
            output: vec![],
        });
        let mut frame = encode_message(&types, &msg).unwrap();
        // failure kind word follows origin string (8), serial (8), status (4)
        frame[HEADER_LEN + 20 + 3] = 2;
        assert!(decode_message(&types, &frame).is_err());
    }
}
