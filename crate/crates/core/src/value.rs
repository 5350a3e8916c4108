//! Distributable values: scalars, shared buffers and the channel payloads
//! that carry either of them.

use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use thiserror::Error;

/// Identifier of a distributable type in a [`TypeRegistry`](crate::wire::TypeRegistry).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeCode(pub u32);

impl TypeCode {
    pub const I32: TypeCode = TypeCode(1);
    pub const U32: TypeCode = TypeCode(2);
    pub const I64: TypeCode = TypeCode(3);
    pub const U64: TypeCode = TypeCode(4);
    pub const F32: TypeCode = TypeCode(5);
    pub const F64: TypeCode = TypeCode(6);
    pub const BOOL: TypeCode = TypeCode(7);
    pub const BYTES: TypeCode = TypeCode(8);
    pub const STRING: TypeCode = TypeCode(9);
}

impl fmt::Display for TypeCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "type#{}", self.0)
    }
}

/// A single scalar value.
///
/// Equality is bitwise for floating point values, so `NaN == NaN` when the
/// payload bits agree and `0.0 != -0.0`.
#[derive(Debug, Clone)]
pub enum Value {
    I32(i32),
    U32(u32),
    I64(i64),
    U64(u64),
    F32(f32),
    F64(f64),
    Bool(bool),
    Bytes(Vec<u8>),
    Str(String),
    /// Fixed-size value of an application-registered type.
    Opaque(TypeCode, Vec<u8>),
}

impl Value {
    pub fn type_code(&self) -> TypeCode {
        match self {
            Value::I32(_) => TypeCode::I32,
            Value::U32(_) => TypeCode::U32,
            Value::I64(_) => TypeCode::I64,
            Value::U64(_) => TypeCode::U64,
            Value::F32(_) => TypeCode::F32,
            Value::F64(_) => TypeCode::F64,
            Value::Bool(_) => TypeCode::BOOL,
            Value::Bytes(_) => TypeCode::BYTES,
            Value::Str(_) => TypeCode::STRING,
            Value::Opaque(code, _) => *code,
        }
    }

    /// The zero value of a built-in type. `None` for application types.
    pub fn zero(code: TypeCode) -> Option<Value> {
        Some(match code {
            TypeCode::I32 => Value::I32(0),
            TypeCode::U32 => Value::U32(0),
            TypeCode::I64 => Value::I64(0),
            TypeCode::U64 => Value::U64(0),
            TypeCode::F32 => Value::F32(0.0),
            TypeCode::F64 => Value::F64(0.0),
            TypeCode::BOOL => Value::Bool(false),
            TypeCode::BYTES => Value::Bytes(Vec::new()),
            TypeCode::STRING => Value::Str(String::new()),
            _ => return None,
        })
    }

    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            Value::I64(v) => Some(v),
            Value::I32(v) => Some(v.into()),
            Value::U32(v) => Some(v.into()),
            _ => None,
        }
    }

    pub fn as_u64(&self) -> Option<u64> {
        match *self {
            Value::U64(v) => Some(v),
            Value::U32(v) => Some(v.into()),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::I32(a), Value::I32(b)) => a == b,
            (Value::U32(a), Value::U32(b)) => a == b,
            (Value::I64(a), Value::I64(b)) => a == b,
            (Value::U64(a), Value::U64(b)) => a == b,
            (Value::F32(a), Value::F32(b)) => a.to_bits() == b.to_bits(),
            (Value::F64(a), Value::F64(b)) => a.to_bits() == b.to_bits(),
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Bytes(a), Value::Bytes(b)) => a == b,
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::Opaque(ca, a), Value::Opaque(cb, b)) => ca == cb && a == b,
            _ => false,
        }
    }
}

impl Eq for Value {}

impl From<i32> for Value {
    fn from(v: i32) -> Self {
        Value::I32(v)
    }
}
impl From<u32> for Value {
    fn from(v: u32) -> Self {
        Value::U32(v)
    }
}
impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::I64(v)
    }
}
impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::U64(v)
    }
}
impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::F64(v)
    }
}
impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}
impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_owned())
    }
}
impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MemoryError {
    #[error("region {offset}+{count} exceeds buffer extent {len}")]
    OutOfBounds { offset: usize, count: usize, len: usize },
    #[error("buffer holds {expected}, got a {actual} value")]
    TypeMismatch { expected: TypeCode, actual: TypeCode },
}

/// A homogeneous array in a node's memory.
///
/// Cloning a `Buffer` clones the reference, not the contents: all clones see
/// the same elements. This is how a family's threads share the result array
/// their parent passed through a global channel.
#[derive(Clone)]
pub struct Buffer {
    inner: Arc<BufferInner>,
}

struct BufferInner {
    element_type: TypeCode,
    data: Mutex<Vec<Value>>,
}

impl Buffer {
    /// A buffer of `len` copies of `fill`.
    pub fn filled(len: usize, fill: Value) -> Buffer {
        Buffer {
            inner: Arc::new(BufferInner {
                element_type: fill.type_code(),
                data: Mutex::new(vec![fill; len]),
            }),
        }
    }

    /// A zeroed buffer of a built-in element type.
    ///
    /// # Panics
    ///
    /// If `element_type` is not a built-in type; use [`Buffer::filled`] for
    /// application types.
    pub fn zeroed(element_type: TypeCode, len: usize) -> Buffer {
        let zero = Value::zero(element_type)
            .unwrap_or_else(|| panic!("{element_type} has no built-in zero value"));
        Buffer::filled(len, zero)
    }

    pub fn from_values(element_type: TypeCode, values: Vec<Value>) -> Result<Buffer, MemoryError> {
        if let Some(bad) = values.iter().find(|v| v.type_code() != element_type) {
            return Err(MemoryError::TypeMismatch {
                expected: element_type,
                actual: bad.type_code(),
            });
        }
        Ok(Buffer {
            inner: Arc::new(BufferInner {
                element_type,
                data: Mutex::new(values),
            }),
        })
    }

    pub fn from_i64s(values: &[i64]) -> Buffer {
        Buffer::from_values(TypeCode::I64, values.iter().map(|&v| Value::I64(v)).collect())
            .expect("homogeneous")
    }

    pub fn element_type(&self) -> TypeCode {
        self.inner.element_type
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, index: usize) -> Option<Value> {
        self.lock().get(index).cloned()
    }

    pub fn get_i64(&self, index: usize) -> Option<i64> {
        self.get(index).and_then(|v| v.as_i64())
    }

    pub fn set(&self, index: usize, value: Value) -> Result<(), MemoryError> {
        self.write_range(index, std::slice::from_ref(&value))
    }

    pub fn read_range(&self, offset: usize, count: usize) -> Result<Vec<Value>, MemoryError> {
        let data = self.lock();
        check_bounds(offset, count, data.len())?;
        Ok(data[offset..offset + count].to_vec())
    }

    pub fn write_range(&self, offset: usize, values: &[Value]) -> Result<(), MemoryError> {
        if let Some(bad) = values.iter().find(|v| v.type_code() != self.inner.element_type) {
            return Err(MemoryError::TypeMismatch {
                expected: self.inner.element_type,
                actual: bad.type_code(),
            });
        }
        let mut data = self.lock();
        check_bounds(offset, values.len(), data.len())?;
        data[offset..offset + values.len()].clone_from_slice(values);
        Ok(())
    }

    /// Copy of the whole contents.
    pub fn snapshot(&self) -> Vec<Value> {
        self.lock().clone()
    }

    pub fn to_i64s(&self) -> Vec<i64> {
        self.lock().iter().filter_map(Value::as_i64).collect()
    }

    /// True if both handles refer to the same memory.
    pub fn same_memory(&self, other: &Buffer) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    fn lock(&self) -> MutexGuard<'_, Vec<Value>> {
        self.inner.data.lock().unwrap_or_else(|e| e.into_inner())
    }
}

fn check_bounds(offset: usize, count: usize, len: usize) -> Result<(), MemoryError> {
    match offset.checked_add(count) {
        Some(end) if end <= len => Ok(()),
        _ => Err(MemoryError::OutOfBounds { offset, count, len }),
    }
}

impl fmt::Debug for Buffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Buffer")
            .field("element_type", &self.inner.element_type)
            .field("len", &self.len())
            .finish()
    }
}

/// Declared kind of a channel parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamType {
    Scalar(TypeCode),
    /// A reference to a buffer with the given element type.
    Buffer(TypeCode),
}

/// What travels through a shared or global channel: a scalar, or a reference
/// to a buffer.
#[derive(Debug, Clone)]
pub enum ChannelValue {
    Scalar(Value),
    Buffer(Buffer),
}

impl ChannelValue {
    pub fn param_type(&self) -> ParamType {
        match self {
            ChannelValue::Scalar(v) => ParamType::Scalar(v.type_code()),
            ChannelValue::Buffer(b) => ParamType::Buffer(b.element_type()),
        }
    }

    pub fn as_scalar(&self) -> Option<&Value> {
        match self {
            ChannelValue::Scalar(v) => Some(v),
            ChannelValue::Buffer(_) => None,
        }
    }

    pub fn as_buffer(&self) -> Option<&Buffer> {
        match self {
            ChannelValue::Buffer(b) => Some(b),
            ChannelValue::Scalar(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        self.as_scalar().and_then(Value::as_i64)
    }

    pub fn as_u64(&self) -> Option<u64> {
        self.as_scalar().and_then(Value::as_u64)
    }
}

/// Scalars compare by value, buffers by identity.
impl PartialEq for ChannelValue {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ChannelValue::Scalar(a), ChannelValue::Scalar(b)) => a == b,
            (ChannelValue::Buffer(a), ChannelValue::Buffer(b)) => a.same_memory(b),
            _ => false,
        }
    }
}

impl<T: Into<Value>> From<T> for ChannelValue {
    fn from(v: T) -> Self {
        ChannelValue::Scalar(v.into())
    }
}

impl From<Buffer> for ChannelValue {
    fn from(b: Buffer) -> Self {
        ChannelValue::Buffer(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buffer_clones_share_memory() {
        let a = Buffer::zeroed(TypeCode::I64, 4);
        let b = a.clone();
        b.set(2, Value::I64(7)).unwrap();
        assert_eq!(a.get_i64(2), Some(7));
        assert!(a.same_memory(&b));
    }

    #[test]
    fn buffer_rejects_wrong_type_and_out_of_range() {
        let a = Buffer::zeroed(TypeCode::I64, 2);
        assert!(matches!(
            a.set(0, Value::I32(1)),
            Err(MemoryError::TypeMismatch { .. })
        ));
        assert!(matches!(
            a.write_range(1, &[Value::I64(1), Value::I64(2)]),
            Err(MemoryError::OutOfBounds { .. })
        ));
        assert_eq!(a.to_i64s(), vec![0, 0]);
    }

    #[test]
    fn float_equality_is_bitwise() {
        assert_eq!(Value::F64(f64::NAN), Value::F64(f64::NAN));
        assert_ne!(Value::F64(0.0), Value::F64(-0.0));
    }
}
