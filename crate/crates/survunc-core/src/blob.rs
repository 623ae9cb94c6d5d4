//! Serde helpers that store `f64` arrays as base64-encoded little-endian
//! byte blobs, keeping model files compact and bitwise-exact.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

pub fn encode(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

pub fn decode(blob: &str) -> Result<Vec<f64>, String> {
    let bytes = STANDARD
        .decode(blob)
        .map_err(|e| format!("invalid base64 blob: {e}"))?;
    if bytes.len() % 8 != 0 {
        return Err(format!("blob length {} is not a multiple of 8", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// `#[serde(with = "blob::f64s")]` for `Vec<f64>` fields.
pub mod f64s {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let blob = String::deserialize(d)?;
        super::decode(&blob).map_err(serde::de::Error::custom)
    }
}

/// `#[serde(with = "blob::f64s_2d")]` for `Vec<Vec<f64>>` fields.
pub mod f64s_2d {
    use serde::{Deserialize, Deserializer, Serializer};
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer>(v: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for row in v {
            seq.serialize_element(&super::encode(row))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let blobs = Vec::<String>::deserialize(d)?;
        blobs
            .iter()
            .map(|b| super::decode(b).map_err(serde::de::Error::custom))
            .collect()
    }
}
