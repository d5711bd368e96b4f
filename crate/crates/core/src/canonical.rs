//! Canonical document serialization.
//!
//! Repository entries, scenario files and chain dumps all hash or compare
//! their serialized form, so one byte layout is fixed for every document:
//! UTF-8 JSON with lexicographically sorted object keys, no insignificant
//! whitespace, and integers only. Floats are rejected outright.

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanonicalError {
    #[error("NonIntegerNumber: canonical documents admit integers only, got {0}")]
    NonIntegerNumber(String),
    #[error("Serialize: {0}")]
    Serialize(String),
    #[error("Parse: {0}")]
    Parse(String),
}

/// Serialize a JSON value into its canonical byte form.
pub fn to_canonical_bytes(value: &Value) -> Result<Vec<u8>, CanonicalError> {
    let mut out = Vec::new();
    write_value(value, &mut out)?;
    Ok(out)
}

pub fn to_canonical_string(value: &Value) -> Result<String, CanonicalError> {
    let bytes = to_canonical_bytes(value)?;
    Ok(String::from_utf8(bytes).expect("writer emits UTF-8"))
}

/// Canonical bytes of any serde-serializable structure.
pub fn struct_to_canonical<T: Serialize>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    let v = serde_json::to_value(value).map_err(|e| CanonicalError::Serialize(e.to_string()))?;
    to_canonical_bytes(&v)
}

/// Parse arbitrary JSON bytes and re-emit them canonically.
pub fn canonicalize(bytes: &[u8]) -> Result<Vec<u8>, CanonicalError> {
    let v: Value =
        serde_json::from_slice(bytes).map_err(|e| CanonicalError::Parse(e.to_string()))?;
    to_canonical_bytes(&v)
}

fn write_value(value: &Value, out: &mut Vec<u8>) -> Result<(), CanonicalError> {
    match value {
        Value::Null => out.extend_from_slice(b"null"),
        Value::Bool(true) => out.extend_from_slice(b"true"),
        Value::Bool(false) => out.extend_from_slice(b"false"),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.extend_from_slice(itoa_i64(i).as_bytes());
            } else if let Some(u) = n.as_u64() {
                out.extend_from_slice(u.to_string().as_bytes());
            } else {
                return Err(CanonicalError::NonIntegerNumber(n.to_string()));
            }
        }
        Value::String(s) => write_string(s, out),
        Value::Array(items) => {
            out.push(b'[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_value(item, out)?;
            }
            out.push(b']');
        }
        Value::Object(map) => {
            // serde_json's default map is already key-ordered, but sorting here
            // keeps canonical output independent of the map implementation.
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push(b'{');
            for (i, key) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(b',');
                }
                write_string(key, out);
                out.push(b':');
                write_value(&map[key.as_str()], out)?;
            }
            out.push(b'}');
        }
    }
    Ok(())
}

fn write_string(s: &str, out: &mut Vec<u8>) {
    out.push(b'"');
    for c in s.chars() {
        match c {
            '"' => out.extend_from_slice(b"\\\""),
            '\\' => out.extend_from_slice(b"\\\\"),
            '\n' => out.extend_from_slice(b"\\n"),
            '\r' => out.extend_from_slice(b"\\r"),
            '\t' => out.extend_from_slice(b"\\t"),
            c if (c as u32) < 0x20 => {
                out.extend_from_slice(format!("\\u{:04x}", c as u32).as_bytes());
            }
            c => {
                let mut buf = [0u8; 4];
                out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            }
        }
    }
    out.push(b'"');
}

fn itoa_i64(i: i64) -> String {
    i.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sorts_keys_and_strips_whitespace() {
        let v: Value = serde_json::from_str(r#"{ "b": 1, "a": [2, {"z": 3, "y": 4}] }"#).unwrap();
        assert_eq!(
            to_canonical_string(&v).unwrap(),
            r#"{"a":[2,{"y":4,"z":3}],"b":1}"#
        );
    }

    #[test]
    fn rejects_floats() {
        let v = json!({"x": 1.5});
        assert!(matches!(
            to_canonical_bytes(&v),
            Err(CanonicalError::NonIntegerNumber(_))
        ));
    }

    #[test]
    fn escapes_control_characters() {
        let v = json!({"s": "line\nbreak\u{0001}"});
        assert_eq!(
            to_canonical_string(&v).unwrap(),
            "{\"s\":\"line\\nbreak\\u0001\"}"
        );
    }

    #[test]
    fn reserialization_is_stable() {
        let v = json!({"k": ["x", -7, {"n": 18446744073709551615u64}], "m": null});
        let first = to_canonical_bytes(&v).unwrap();
        let second = canonicalize(&first).unwrap();
        assert_eq!(first, second);
    }
}
