//! Versioned JSON documents.
//!
//! Every document is a JSON object carrying `format_version` and a `document` kind
//! next to the payload fields. Loading rejects a different version; a
//! missing version (hand-written input) is read as the current one.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "atomflow-1";

/// Payload wrapped with version and kind tags.
pub fn to_value<T: Serialize>(kind: &str, data: &T) -> Result<Value> {
    let mut obj = match serde_json::to_value(data)? {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("data".into(), other);
            m
        }
    };
    obj.insert("format_version".into(), Value::String(FORMAT_VERSION.into()));
    obj.insert("document".into(), Value::String(kind.into()));
    Ok(Value::Object(obj))
}

pub fn to_string<T: Serialize>(kind: &str, data: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&to_value(kind, data)?)?;
    s.push('\n');
    Ok(s)
}

/// Checks the tags and strips them, leaving the payload.
pub fn from_value<T: DeserializeOwned>(kind: &str, v: Value) -> Result<T> {
    let Value::Object(mut obj) = v else {
        return Err(Error::Parse("expected a JSON object".into()));
    };
    match obj.remove("format_version") {
        None => {}
        Some(Value::String(s)) if s == FORMAT_VERSION => {}
        Some(other) => {
            return Err(Error::FormatVersion {
                expected: FORMAT_VERSION.into(),
                found: match other {
                    Value::String(s) => s,
                    v => v.to_string(),
                },
            })
        }
    }
    match obj.remove("document") {
        None => {}
        Some(Value::String(s)) if s == kind => {}
        Some(other) => return Err(Error::Parse(format!("expected a {kind} document, found {other}"))),
    }
    let payload = match obj.remove("data") {
        Some(d) if obj.is_empty() => d,
        Some(d) => {
            obj.insert("data".into(), d);
            Value::Object(obj)
        }
        None => Value::Object(obj),
    };
    Ok(serde_json::from_value(payload)?)
}

pub fn from_str<T: DeserializeOwned>(kind: &str, s: &str) -> Result<T> {
    from_value(kind, serde_json::from_str(s)?)
}

pub fn save<T: Serialize>(path: &Path, kind: &str, data: &T) -> Result<()> {
    std::fs::write(path, to_string(kind, data)?)?;
    Ok(())
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    from_str(kind, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{make_atomic, AtomicMeasure};

    #[test]
    fn round_trip_and_version() {
        let mu = make_atomic(&[0.25, 0.75], &[vec![0.0], vec![1.0]]).unwrap();
        let s = to_string("measure", &mu).unwrap();
        let back: AtomicMeasure = from_str("measure", &s).unwrap();
        assert_eq!(back, mu);
        let bad = s.replace(FORMAT_VERSION, "atomflow-0");
        assert!(matches!(
            from_str::<AtomicMeasure>("measure", &bad),
            Err(Error::FormatVersion { .. })
        ));
        assert!(matches!(from_str::<AtomicMeasure>("curve", &s), Err(Error::Parse(_))));
        let plain = r#"{"dim": 1, "weights": [1.0], "locations": [[0.0]]}"#;
        assert_eq!(
            from_str::<AtomicMeasure>("measure", plain).unwrap(),
            AtomicMeasure::dirac(&[0.0])
        );
    }

    #[test]
    fn non_object_payload() {
        let v = vec![1.0, 2.0];
        let s = to_string("list", &v).unwrap();
        assert_eq!(from_str::<Vec<f64>>("list", &s).unwrap(), v);
    }

    #[test]
    fn tagged_enum_payload() {
        let b = crate::dynamics::NonLocalField::LinearDecay { rate: 0.5 };
        let s = to_string("field", &b).unwrap();
        assert_eq!(from_str::<crate::dynamics::NonLocalField>("field", &s).unwrap(), b);
    }
}
