//! Canonical serialization and the three-message node protocol.
//!
//! Every frame is a 12-byte header followed by a body:
//!
//! ```text
//! offset  size  field
//!      0     4  magic 0x44535650 ("DSVP")
//!      4     1  version (1)
//!      5     1  kind (1 = Create, 2 = Sync, 3 = Kill)
//!      6     2  reserved, zero
//!      8     4  body length in bytes
//! ```
//!
//! Body layouts are documented on [`CreateBody`], [`SyncBody`] and
//! [`KillBody`].

mod message;
mod types;
mod xdr;

use std::io::{self, Read};

use thiserror::Error;

pub use message::{
    decode_message, encode_message, encode_message_with, ChannelRecord, CreateBody, KillBody,
    MessageKind, PlaceSpec, SyncBody, WireMessage, WireStatus,
};
pub use types::{TypeRegistry, TypeTag, FIRST_APPLICATION_CODE};
pub use xdr::{Decoder, Encoder, HostOrder};

pub const MAGIC: u32 = 0x4453_5650;
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 12;
/// Largest body a stream reader accepts.
pub const MAX_BODY_LEN: u32 = 64 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("input truncated: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("unknown type code {0}")]
    UnknownType(u32),
    #[error("type code {0} is reserved or already registered")]
    TypeCodeTaken(u32),
    #[error("value of type {actual} encoded as type {expected}")]
    TypeMismatch { expected: u32, actual: u32 },
    #[error("value out of range: {0}")]
    ValueOutOfRange(String),
    #[error("nonzero padding")]
    NonZeroPadding,
    #[error("invalid boolean {0}")]
    InvalidBool(u32),
    #[error("invalid UTF-8 in string")]
    InvalidUtf8,
    #[error("{0} bytes do not fit a 32-bit length")]
    TooLarge(usize),
    #[error("bad magic {0:#010x}")]
    BadMagic(u32),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("nonzero reserved header bytes")]
    BadReserved,
    #[error("header declares {declared} body bytes, frame has {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid {field} code {code}")]
    InvalidCode { field: &'static str, code: u32 },
}

#[derive(Debug, Error)]
pub enum FrameReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Parsed frame header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub kind: MessageKind,
    pub body_len: u32,
}

impl FrameHeader {
    pub fn parse(bytes: &[u8; HEADER_LEN]) -> Result<FrameHeader, WireError> {
        let mut d = Decoder::new(bytes);
        let magic = d.get_u32()?;
        if magic != MAGIC {
            return Err(WireError::BadMagic(magic));
        }
        let version = bytes[4];
        if version != VERSION {
            return Err(WireError::UnsupportedVersion(version));
        }
        let kind = MessageKind::from_code(bytes[5])?;
        if bytes[6] != 0 || bytes[7] != 0 {
            return Err(WireError::BadReserved);
        }
        let body_len = u32::from_be_bytes(bytes[8..12].try_into().expect("4 bytes"));
        Ok(FrameHeader { kind, body_len })
    }
}

/// Reads one complete frame (header and body) from a stream.
///
/// Returns `Ok(None)` on a clean end of stream before any header byte.
pub fn read_frame(reader: &mut impl Read) -> Result<Option<Vec<u8>>, FrameReadError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match reader.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let parsed = FrameHeader::parse(&header)?;
    if parsed.body_len > MAX_BODY_LEN {
        return Err(WireError::TooLarge(parsed.body_len as usize).into());
    }
    let mut frame = Vec::with_capacity(HEADER_LEN + parsed.body_len as usize);
    frame.extend_from_slice(&header);
    frame.resize(HEADER_LEN + parsed.body_len as usize, 0);
    reader.read_exact(&mut frame[HEADER_LEN..])?;
    Ok(Some(frame))
}
