//! Data descriptions: which argument memory a distributable thread function
//! reads and writes, and the transfer pipeline derived from that.
//!
//! A description evaluator receives the argument values of a create and
//! lists regions with [`Describer::input`], [`Describer::output`] and
//! [`Describer::inout`] (or their `_range` variants). It may loop and branch
//! on argument values, so sizes can be dynamic.
//!
//! Argument slots are numbered shareds first, then globals. A scalar
//! argument is described as a whole-value region of one element.
//!
//! Payload layout, all fields XDR:
//!
//! ```text
//! u32 record count
//! per record: u32 slot, u32 offset, u32 count, u32 element type,
//!             count × encoded element
//! ```

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::value::{ChannelValue, MemoryError, TypeCode, Value};
use crate::wire::{Decoder, Encoder, TypeRegistry, WireError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Input,
    Output,
    InOut,
}

impl Direction {
    pub fn is_input(self) -> bool {
        matches!(self, Direction::Input | Direction::InOut)
    }

    pub fn is_output(self) -> bool {
        matches!(self, Direction::Output | Direction::InOut)
    }
}

/// A run of elements of one argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Region {
    pub slot: u32,
    pub offset: u32,
    pub count: u32,
    pub element_type: TypeCode,
}

impl Region {
    fn end(&self) -> u64 {
        self.offset as u64 + self.count as u64
    }

    fn overlaps(&self, other: &Region) -> bool {
        self.slot == other.slot && (self.offset as u64) < other.end() && (other.offset as u64) < self.end()
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "arg {}[{}..{}]", self.slot, self.offset, self.end())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransferDirective {
    pub direction: Direction,
    pub region: Region,
}

/// The ordered directives produced by one evaluation of a description.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransferSet {
    directives: Vec<TransferDirective>,
}

impl TransferSet {
    pub fn directives(&self) -> &[TransferDirective] {
        &self.directives
    }

    pub fn len(&self) -> usize {
        self.directives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directives.is_empty()
    }

    pub fn inputs(&self) -> impl Iterator<Item = &Region> {
        self.directives
            .iter()
            .filter(|d| d.direction.is_input())
            .map(|d| &d.region)
    }

    pub fn outputs(&self) -> impl Iterator<Item = &Region> {
        self.directives
            .iter()
            .filter(|d| d.direction.is_output())
            .map(|d| &d.region)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DescribeError {
    #[error("thread function {0:?} has no data description")]
    UnregisteredFunction(String),
    #[error("argument slot {slot} does not exist ({arity} arguments)")]
    UnknownSlot { slot: usize, arity: usize },
    #[error("argument slot {0} is a scalar; element ranges need a buffer")]
    NotABuffer(usize),
    #[error("empty region on argument slot {0}")]
    EmptyRegion(usize),
    #[error("{region} exceeds the buffer extent {len}")]
    OutOfBounds { region: Region, len: usize },
    #[error("{0} overlaps a region already described in the same direction")]
    DuplicateRegion(Region),
    #[error("{0} overlaps a region of the opposite direction; use inout")]
    MixedOverlap(Region),
    #[error("{0}")]
    Argument(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransferError {
    #[error("malformed payload: {0}")]
    Malformed(#[from] WireError),
    #[error("payload names argument slot {slot}, which does not exist")]
    UnknownSlot { slot: u32 },
    #[error("{region} does not fit the argument extent {len}")]
    ExtentMismatch { region: Region, len: usize },
    #[error("{region} carries type {actual}, argument holds {expected}")]
    TypeMismatch {
        region: Region,
        expected: TypeCode,
        actual: TypeCode,
    },
    #[error("{0} is not an output region of this family")]
    UnexpectedRegion(Region),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// Argument values as a description sees them.
#[derive(Debug, Clone)]
pub struct ArgEnv {
    values: Vec<ChannelValue>,
    shared_count: usize,
}

impl ArgEnv {
    pub fn new(shareds: Vec<ChannelValue>, globals: Vec<ChannelValue>) -> ArgEnv {
        let shared_count = shareds.len();
        let mut values = shareds;
        values.extend(globals);
        ArgEnv { values, shared_count }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shared_count(&self) -> usize {
        self.shared_count
    }

    pub fn get(&self, slot: usize) -> Option<&ChannelValue> {
        self.values.get(slot)
    }

    pub fn values(&self) -> &[ChannelValue] {
        &self.values
    }

    /// Splits back into shareds and globals.
    pub fn into_parts(mut self) -> (Vec<ChannelValue>, Vec<ChannelValue>) {
        let globals = self.values.split_off(self.shared_count);
        (self.values, globals)
    }

    /// An integer scalar argument, for sizes and loop bounds.
    pub fn i64(&self, slot: usize) -> Result<i64, DescribeError> {
        self.get(slot)
            .and_then(ChannelValue::as_i64)
            .ok_or_else(|| DescribeError::Argument(format!("argument slot {slot} is not an integer scalar")))
    }

    /// Element count of a buffer argument.
    pub fn buffer_len(&self, slot: usize) -> Result<usize, DescribeError> {
        match self.get(slot) {
            Some(ChannelValue::Buffer(b)) => Ok(b.len()),
            Some(_) => Err(DescribeError::NotABuffer(slot)),
            None => Err(DescribeError::UnknownSlot {
                slot,
                arity: self.len(),
            }),
        }
    }

    fn extent(&self, slot: u32) -> Option<(usize, TypeCode)> {
        match self.values.get(slot as usize)? {
            ChannelValue::Scalar(v) => Some((1, v.type_code())),
            ChannelValue::Buffer(b) => Some((b.len(), b.element_type())),
        }
    }

    fn read_region(&self, region: &Region) -> Result<Vec<Value>, TransferError> {
        match self.values.get(region.slot as usize) {
            Some(ChannelValue::Scalar(v)) => Ok(vec![v.clone()]),
            Some(ChannelValue::Buffer(b)) => Ok(b.read_range(region.offset as usize, region.count as usize)?),
            None => Err(TransferError::UnknownSlot { slot: region.slot }),
        }
    }

    fn write_region(&mut self, region: &Region, mut values: Vec<Value>) -> Result<(), TransferError> {
        match self.values.get_mut(region.slot as usize) {
            Some(ChannelValue::Scalar(v)) => {
                *v = values.pop().expect("scalar region holds one element");
                Ok(())
            }
            Some(ChannelValue::Buffer(b)) => Ok(b.write_range(region.offset as usize, &values)?),
            None => Err(TransferError::UnknownSlot { slot: region.slot }),
        }
    }

    fn check_region(&self, region: &Region) -> Result<(), TransferError> {
        let (len, ty) = self
            .extent(region.slot)
            .ok_or(TransferError::UnknownSlot { slot: region.slot })?;
        if region.count == 0 || region.end() > len as u64 {
            return Err(TransferError::ExtentMismatch { region: *region, len });
        }
        if ty != region.element_type {
            return Err(TransferError::TypeMismatch {
                region: *region,
                expected: ty,
                actual: region.element_type,
            });
        }
        Ok(())
    }
}

/// Collects directives while a description runs.
pub struct Describer<'a> {
    env: &'a ArgEnv,
    directives: Vec<TransferDirective>,
}

impl<'a> Describer<'a> {
    fn new(env: &'a ArgEnv) -> Describer<'a> {
        Describer {
            env,
            directives: Vec::new(),
        }
    }

    /// The whole argument: one element for a scalar, every element for a
    /// buffer.
    pub fn input(&mut self, slot: usize) -> Result<&mut Self, DescribeError> {
        self.whole(Direction::Input, slot)
    }

    pub fn output(&mut self, slot: usize) -> Result<&mut Self, DescribeError> {
        self.whole(Direction::Output, slot)
    }

    pub fn inout(&mut self, slot: usize) -> Result<&mut Self, DescribeError> {
        self.whole(Direction::InOut, slot)
    }

    pub fn input_range(&mut self, slot: usize, offset: usize, count: usize) -> Result<&mut Self, DescribeError> {
        self.range(Direction::Input, slot, offset, count)
    }

    pub fn output_range(&mut self, slot: usize, offset: usize, count: usize) -> Result<&mut Self, DescribeError> {
        self.range(Direction::Output, slot, offset, count)
    }

    pub fn inout_range(&mut self, slot: usize, offset: usize, count: usize) -> Result<&mut Self, DescribeError> {
        self.range(Direction::InOut, slot, offset, count)
    }

    fn whole(&mut self, direction: Direction, slot: usize) -> Result<&mut Self, DescribeError> {
        let (len, element_type) = self.lookup(slot)?;
        let count = u32::try_from(len).map_err(|_| DescribeError::Argument(format!("argument slot {slot} is too large")))?;
        self.push(direction, slot, 0, count, element_type, len)
    }

    fn range(&mut self, direction: Direction, slot: usize, offset: usize, count: usize) -> Result<&mut Self, DescribeError> {
        let (len, element_type) = self.lookup(slot)?;
        if matches!(self.env.get(slot), Some(ChannelValue::Scalar(_))) {
            return Err(DescribeError::NotABuffer(slot));
        }
        let too_large = || DescribeError::Argument(format!("region on argument slot {slot} is too large"));
        let offset = u32::try_from(offset).map_err(|_| too_large())?;
        let count = u32::try_from(count).map_err(|_| too_large())?;
        self.push(direction, slot, offset, count, element_type, len)
    }

    fn lookup(&self, slot: usize) -> Result<(usize, TypeCode), DescribeError> {
        u32::try_from(slot)
            .ok()
            .and_then(|s| self.env.extent(s))
            .ok_or(DescribeError::UnknownSlot {
                slot,
                arity: self.env.len(),
            })
    }

    fn push(
        &mut self,
        direction: Direction,
        slot: usize,
        offset: u32,
        count: u32,
        element_type: TypeCode,
        len: usize,
    ) -> Result<&mut Self, DescribeError> {
        if count == 0 {
            return Err(DescribeError::EmptyRegion(slot));
        }
        let region = Region {
            slot: slot as u32,
            offset,
            count,
            element_type,
        };
        if region.end() > len as u64 {
            return Err(DescribeError::OutOfBounds { region, len });
        }
        for d in &self.directives {
            if d.region.overlaps(&region) {
                return Err(if d.direction == direction {
                    DescribeError::DuplicateRegion(region)
                } else {
                    DescribeError::MixedOverlap(region)
                });
            }
        }
        self.directives.push(TransferDirective { direction, region });
        Ok(self)
    }
}

type Evaluator = dyn Fn(&ArgEnv, &mut Describer<'_>) -> Result<(), DescribeError> + Send + Sync;

/// A named description evaluator attached to a thread function.
#[derive(Clone)]
pub struct DataDescription {
    name: String,
    evaluator: Arc<Evaluator>,
}

impl DataDescription {
    pub fn new<F>(name: &str, evaluator: F) -> DataDescription
    where
        F: Fn(&ArgEnv, &mut Describer<'_>) -> Result<(), DescribeError> + Send + Sync + 'static,
    {
        DataDescription {
            name: name.to_owned(),
            evaluator: Arc::new(evaluator),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn describe(&self, env: &ArgEnv) -> Result<TransferSet, DescribeError> {
        let mut d = Describer::new(env);
        (self.evaluator)(env, &mut d)?;
        Ok(TransferSet {
            directives: d.directives,
        })
    }
}

impl fmt::Debug for DataDescription {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("DataDescription").field(&self.name).finish()
    }
}

fn encode_regions<'r>(
    regions: impl Iterator<Item = &'r Region>,
    env: &ArgEnv,
    types: &TypeRegistry,
) -> Result<Vec<u8>, TransferError> {
    let regions: Vec<&Region> = regions.collect();
    let mut enc = Encoder::new();
    enc.put_u32(regions.len() as u32);
    for region in regions {
        env.check_region(region)?;
        enc.put_u32(region.slot);
        enc.put_u32(region.offset);
        enc.put_u32(region.count);
        enc.put_u32(region.element_type.0);
        for v in env.read_region(region)? {
            types.encode_into(&mut enc, region.element_type, &v)?;
        }
    }
    Ok(enc.into_bytes())
}

/// Decodes a payload into its regions and element values.
pub fn decode_payload(payload: &[u8], types: &TypeRegistry) -> Result<Vec<(Region, Vec<Value>)>, TransferError> {
    if payload.is_empty() {
        return Ok(Vec::new());
    }
    let mut dec = Decoder::new(payload);
    let n = dec.get_count(16)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let region = Region {
            slot: dec.get_u32()?,
            offset: dec.get_u32()?,
            count: dec.get_u32()?,
            element_type: TypeCode(dec.get_u32()?),
        };
        types.get(region.element_type)?;
        let min = types.min_encoded_size(region.element_type).max(1);
        let needed = (region.count as usize).saturating_mul(min);
        if needed > dec.remaining() {
            return Err(WireError::Truncated {
                needed,
                available: dec.remaining(),
            }
            .into());
        }
        let mut values = Vec::with_capacity(region.count as usize);
        for _ in 0..region.count {
            values.push(types.decode_from(&mut dec, region.element_type)?);
        }
        out.push((region, values));
    }
    dec.finish()?;
    Ok(out)
}

/// Serializes every input and inout region, in directive order.
pub fn extract_inputs(ts: &TransferSet, env: &ArgEnv, types: &TypeRegistry) -> Result<Vec<u8>, TransferError> {
    encode_regions(ts.inputs(), env, types)
}

/// Materializes an input payload in a freshly allocated argument
/// environment.
pub fn apply_inputs(payload: &[u8], env: &mut ArgEnv, types: &TypeRegistry) -> Result<(), TransferError> {
    let records = decode_payload(payload, types)?;
    for (region, _) in &records {
        env.check_region(region)?;
    }
    for (region, values) in records {
        env.write_region(&region, values)?;
    }
    Ok(())
}

/// Serializes every output and inout region, in directive order.
pub fn extract_outputs(ts: &TransferSet, env: &ArgEnv, types: &TypeRegistry) -> Result<Vec<u8>, TransferError> {
    encode_regions(ts.outputs(), env, types)
}

/// Writes an output payload into the caller's memory. Every region must be
/// one of the output regions of `ts`; nothing else is touched. The payload is
/// validated completely before the first write.
pub fn apply_outputs(
    ts: &TransferSet,
    payload: &[u8],
    env: &mut ArgEnv,
    types: &TypeRegistry,
) -> Result<(), TransferError> {
    let records = decode_payload(payload, types)?;
    for (region, _) in &records {
        if !ts.outputs().any(|r| r == region) {
            return Err(TransferError::UnexpectedRegion(*region));
        }
        env.check_region(region)?;
    }
    for (region, values) in records {
        env.write_region(&region, values)?;
    }
    Ok(())
}
