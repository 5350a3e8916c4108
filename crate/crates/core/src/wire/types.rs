use std::collections::BTreeMap;

use super::xdr::{Decoder, Encoder};
use super::WireError;
use crate::value::{TypeCode, Value};

/// Registry entry describing how a type is represented on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeTag {
    pub code: TypeCode,
    pub name: String,
    /// Encoded size in bytes, padding excluded. `None` for variable-length types.
    pub fixed_size: Option<u32>,
}

/// Codes below this value are reserved for built-in types.
pub const FIRST_APPLICATION_CODE: u32 = 0x100;

/// The set of distributable types a node understands.
///
/// Built once at startup (or per node) and read-only afterwards. Application
/// types are fixed-size opaque records carried as [`Value::Opaque`].
#[derive(Debug, Clone)]
pub struct TypeRegistry {
    tags: BTreeMap<TypeCode, TypeTag>,
}

impl Default for TypeRegistry {
    fn default() -> Self {
        TypeRegistry::standard()
    }
}

impl TypeRegistry {
    /// Registry holding the built-in types only.
    pub fn standard() -> TypeRegistry {
        let builtin = [
            (TypeCode::I32, "i32", Some(4)),
            (TypeCode::U32, "u32", Some(4)),
            (TypeCode::I64, "i64", Some(8)),
            (TypeCode::U64, "u64", Some(8)),
            (TypeCode::F32, "f32", Some(4)),
            (TypeCode::F64, "f64", Some(8)),
            (TypeCode::BOOL, "bool", Some(4)),
            (TypeCode::BYTES, "bytes", None),
            (TypeCode::STRING, "string", None),
        ];
        let tags = builtin
            .into_iter()
            .map(|(code, name, fixed_size)| {
                (
                    code,
                    TypeTag {
                        code,
                        name: name.to_owned(),
                        fixed_size,
                    },
                )
            })
            .collect();
        TypeRegistry { tags }
    }

    /// Adds a fixed-size opaque application type.
    pub fn register_opaque(&mut self, code: TypeCode, name: &str, size: u32) -> Result<(), WireError> {
        if code.0 < FIRST_APPLICATION_CODE || self.tags.contains_key(&code) {
            return Err(WireError::TypeCodeTaken(code.0));
        }
        self.tags.insert(
            code,
            TypeTag {
                code,
                name: name.to_owned(),
                fixed_size: Some(size),
            },
        );
        Ok(())
    }

    pub fn get(&self, code: TypeCode) -> Result<&TypeTag, WireError> {
        self.tags.get(&code).ok_or(WireError::UnknownType(code.0))
    }

    pub fn tags(&self) -> impl Iterator<Item = &TypeTag> {
        self.tags.values()
    }

    /// Zero value used when a receiving node allocates a buffer.
    pub fn zero_value(&self, code: TypeCode) -> Result<Value, WireError> {
        let tag = self.get(code)?;
        Ok(Value::zero(code).unwrap_or_else(|| {
            Value::Opaque(code, vec![0; tag.fixed_size.unwrap_or(0) as usize])
        }))
    }

    /// Minimum number of bytes one encoded value of `code` occupies.
    pub(crate) fn min_encoded_size(&self, code: TypeCode) -> usize {
        match self.tags.get(&code).and_then(|t| t.fixed_size) {
            Some(n) => (n as usize).div_ceil(4) * 4,
            None => 4,
        }
    }

    pub fn encode_into(&self, enc: &mut Encoder, code: TypeCode, value: &Value) -> Result<(), WireError> {
        let tag = self.get(code)?;
        if value.type_code() != code {
            return Err(WireError::TypeMismatch {
                expected: code.0,
                actual: value.type_code().0,
            });
        }
        match value {
            Value::I32(v) => enc.put_i32(*v),
            Value::U32(v) => enc.put_u32(*v),
            Value::I64(v) => enc.put_i64(*v),
            Value::U64(v) => enc.put_u64(*v),
            Value::F32(v) => enc.put_f32(*v),
            Value::F64(v) => enc.put_f64(*v),
            Value::Bool(v) => enc.put_bool(*v),
            Value::Bytes(b) => enc.put_opaque(b)?,
            Value::Str(s) => enc.put_string(s)?,
            Value::Opaque(_, bytes) => {
                let size = tag.fixed_size.unwrap_or(0) as usize;
                if bytes.len() != size {
                    return Err(WireError::ValueOutOfRange(format!(
                        "{} expects {size} bytes, value has {}",
                        tag.name,
                        bytes.len()
                    )));
                }
                enc.put_fixed_opaque(bytes);
            }
        }
        Ok(())
    }

    pub fn decode_from(&self, dec: &mut Decoder<'_>, code: TypeCode) -> Result<Value, WireError> {
        let tag = self.get(code)?;
        Ok(match code {
            TypeCode::I32 => Value::I32(dec.get_i32()?),
            TypeCode::U32 => Value::U32(dec.get_u32()?),
            TypeCode::I64 => Value::I64(dec.get_i64()?),
            TypeCode::U64 => Value::U64(dec.get_u64()?),
            TypeCode::F32 => Value::F32(dec.get_f32()?),
            TypeCode::F64 => Value::F64(dec.get_f64()?),
            TypeCode::BOOL => Value::Bool(dec.get_bool()?),
            TypeCode::BYTES => Value::Bytes(dec.get_opaque()?.to_vec()),
            TypeCode::STRING => Value::Str(dec.get_string()?),
            _ => {
                let size = tag.fixed_size.unwrap_or(0) as usize;
                Value::Opaque(code, dec.get_fixed_opaque(size)?.to_vec())
            }
        })
    }

    /// Canonical encoding of one value.
    pub fn encode_value(&self, code: TypeCode, value: &Value) -> Result<Vec<u8>, WireError> {
        let mut enc = Encoder::new();
        self.encode_into(&mut enc, code, value)?;
        Ok(enc.into_bytes())
    }

    /// Decodes one value from the front of `bytes`, returning it with the
    /// number of bytes consumed. Nothing is returned on error.
    pub fn decode_value(&self, code: TypeCode, bytes: &[u8]) -> Result<(Value, usize), WireError> {
        let mut dec = Decoder::new(bytes);
        let value = self.decode_from(&mut dec, code)?;
        Ok((value, dec.position()))
    }
}
