//! XDR-style primitive encoding.
//!
//! Everything is big-endian. 32-bit quantities take 4 bytes, 64-bit ones take
//! 8 bytes, and variable-length data is a `u32` length followed by the bytes
//! and zero padding up to the next multiple of four.

use super::WireError;

/// Byte order of the host whose memory image is being encoded.
///
/// The encoder reads a primitive's in-memory image in this order and swaps it
/// into network order. On any real host the choice is [`HostOrder::NATIVE`];
/// the other variant exists so both conversion paths can be exercised on one
/// machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostOrder {
    Little,
    Big,
}

impl HostOrder {
    #[cfg(target_endian = "little")]
    pub const NATIVE: HostOrder = HostOrder::Little;
    #[cfg(target_endian = "big")]
    pub const NATIVE: HostOrder = HostOrder::Big;
}

pub(crate) fn padding(len: usize) -> usize {
    (4 - len % 4) % 4
}

#[derive(Debug)]
pub struct Encoder {
    buf: Vec<u8>,
    host: HostOrder,
}

impl Default for Encoder {
    fn default() -> Self {
        Encoder::new()
    }
}

impl Encoder {
    pub fn new() -> Encoder {
        Encoder::with_host_order(HostOrder::NATIVE)
    }

    pub fn with_host_order(host: HostOrder) -> Encoder {
        Encoder {
            buf: Vec::new(),
            host,
        }
    }

    pub fn host_order(&self) -> HostOrder {
        self.host
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    fn put_image<const N: usize>(&mut self, mut image: [u8; N]) {
        if self.host == HostOrder::Little {
            image.reverse();
        }
        self.buf.extend_from_slice(&image);
    }

    pub fn put_u32(&mut self, v: u32) {
        let image = match self.host {
            HostOrder::Little => v.to_le_bytes(),
            HostOrder::Big => v.to_be_bytes(),
        };
        self.put_image(image);
    }

    pub fn put_i32(&mut self, v: i32) {
        self.put_u32(v as u32);
    }

    pub fn put_u64(&mut self, v: u64) {
        let image = match self.host {
            HostOrder::Little => v.to_le_bytes(),
            HostOrder::Big => v.to_be_bytes(),
        };
        self.put_image(image);
    }

    pub fn put_i64(&mut self, v: i64) {
        self.put_u64(v as u64);
    }

    pub fn put_f32(&mut self, v: f32) {
        self.put_u32(v.to_bits());
    }

    pub fn put_f64(&mut self, v: f64) {
        self.put_u64(v.to_bits());
    }

    pub fn put_bool(&mut self, v: bool) {
        self.put_u32(u32::from(v));
    }

    /// Fixed-length opaque data: the bytes plus padding, no length prefix.
    pub fn put_fixed_opaque(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
        self.buf.extend(std::iter::repeat_n(0, padding(bytes.len())));
    }

    pub fn put_opaque(&mut self, bytes: &[u8]) -> Result<(), WireError> {
        let len = u32::try_from(bytes.len()).map_err(|_| WireError::TooLarge(bytes.len()))?;
        self.put_u32(len);
        self.put_fixed_opaque(bytes);
        Ok(())
    }

    pub fn put_string(&mut self, s: &str) -> Result<(), WireError> {
        self.put_opaque(s.as_bytes())
    }

    /// Appends already-encoded bytes verbatim.
    pub fn put_raw(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }
}

/// Strict decoder over a byte slice: nonzero padding is rejected.
#[derive(Debug)]
pub struct Decoder<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8]) -> Decoder<'a> {
        Decoder { data, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.remaining() < n {
            return Err(WireError::Truncated {
                needed: n,
                available: self.remaining(),
            });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn take_array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn get_u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take_array()?))
    }

    pub fn get_i32(&mut self) -> Result<i32, WireError> {
        Ok(self.get_u32()? as i32)
    }

    pub fn get_u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take_array()?))
    }

    pub fn get_i64(&mut self) -> Result<i64, WireError> {
        Ok(self.get_u64()? as i64)
    }

    pub fn get_f32(&mut self) -> Result<f32, WireError> {
        Ok(f32::from_bits(self.get_u32()?))
    }

    pub fn get_f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_bits(self.get_u64()?))
    }

    pub fn get_bool(&mut self) -> Result<bool, WireError> {
        match self.get_u32()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(WireError::InvalidBool(other)),
        }
    }

    pub fn get_fixed_opaque(&mut self, len: usize) -> Result<&'a [u8], WireError> {
        let pad = padding(len);
        if self.remaining() < len.saturating_add(pad) {
            return Err(WireError::Truncated {
                needed: len.saturating_add(pad),
                available: self.remaining(),
            });
        }
        let bytes = self.take(len)?;
        if self.take(pad)?.iter().any(|&b| b != 0) {
            return Err(WireError::NonZeroPadding);
        }
        Ok(bytes)
    }

    pub fn get_opaque(&mut self) -> Result<&'a [u8], WireError> {
        let len = self.get_u32()? as usize;
        self.get_fixed_opaque(len)
    }

    pub fn get_string(&mut self) -> Result<String, WireError> {
        let bytes = self.get_opaque()?;
        String::from_utf8(bytes.to_vec()).map_err(|_| WireError::InvalidUtf8)
    }

    /// Count prefix of an array whose elements take at least `min_element`
    /// bytes each. Rejects counts the remaining input cannot possibly hold,
    /// so a hostile count never drives a huge allocation.
    pub fn get_count(&mut self, min_element: usize) -> Result<usize, WireError> {
        let n = self.get_u32()? as usize;
        let needed = n.saturating_mul(min_element.max(1));
        if needed > self.remaining() {
            return Err(WireError::Truncated {
                needed,
                available: self.remaining(),
            });
        }
        Ok(n)
    }

    pub fn finish(self) -> Result<(), WireError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(WireError::TrailingBytes(n)),
        }
    }
}
