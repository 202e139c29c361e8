//! Versioned JSON envelopes for model files.
//!
//! ```json
//! { "format": "speechcascade/cascade", "version": 1, "payload": { ... } }
//! ```
//!
//! Floats are written with shortest round-trip formatting and parsed exactly,
//! so a reloaded model predicts bit-identically.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    payload: T,
}

pub fn to_json<T: Serialize>(format: &str, payload: &T) -> Result<String> {
    let env = Envelope {
        format: format.to_string(),
        version: FORMAT_VERSION,
        payload,
    };
    serde_json::to_string_pretty(&env)
        .map(|s| s + "\n")
        .map_err(|e| Error::Serialization(e.to_string()))
}

pub fn from_json<T: DeserializeOwned>(format: &str, text: &str, source: &Path) -> Result<T> {
    let env: Envelope<T> =
        serde_json::from_str(text).map_err(|e| Error::parse(source, e.line(), e.to_string()))?;
    if env.format != format {
        return Err(Error::parse(
            source,
            1,
            format!("expected format {format:?}, found {:?}", env.format),
        ));
    }
    if env.version != FORMAT_VERSION {
        return Err(Error::parse(
            source,
            1,
            format!("unsupported version {} (expected {FORMAT_VERSION})", env.version),
        ));
    }
    Ok(env.payload)
}

pub fn save<T: Serialize>(format: &str, payload: &T, path: &Path) -> Result<()> {
    crate::error::write_file(path, to_json(format, payload)?)
}

pub fn load<T: DeserializeOwned>(format: &str, path: &Path) -> Result<T> {
    from_json(format, &crate::error::read_to_string(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let v = vec![0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23];
        let text = to_json("test/vec", &v).unwrap();
        let back: Vec<f64> = from_json("test/vec", &text, Path::new("t")).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn rejects_wrong_format_and_version() {
        let text = to_json("a", &1u8).unwrap();
        assert!(from_json::<u8>("b", &text, Path::new("t")).is_err());
        let bumped = text.replace("\"version\": 1", "\"version\": 2");
        assert!(from_json::<u8>("a", &bumped, Path::new("t")).is_err());
    }
}
