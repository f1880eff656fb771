//! Array encoding for persisted models: `{"shape": [...], "data": "<base64>"}`
//! where `data` holds the values as little-endian IEEE-754 doubles in
//! row-major order. Used through `#[serde(with = "...")]`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Byte order recorded in every saved file.
pub const BYTE_ORDER: &str = "little-endian";

#[derive(Serialize, Deserialize)]
struct Encoded {
    shape: Vec<usize>,
    data: String,
}

fn encode(values: impl Iterator<Item = f64>) -> String {
    let bytes: Vec<u8> = values.flat_map(f64::to_le_bytes).collect();
    STANDARD.encode(bytes)
}

fn decode<E: serde::de::Error>(data: &str, expected: usize) -> Result<Vec<f64>, E> {
    let bytes = STANDARD.decode(data).map_err(E::custom)?;
    if bytes.len() != expected * 8 {
        return Err(E::custom(format!(
            "array payload has {} bytes, expected {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub mod vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        Encoded {
            shape: vec![v.len()],
            data: encode(v.iter().copied()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let e = Encoded::deserialize(d)?;
        let [n] = e.shape[..] else {
            return Err(D::Error::custom("expected a 1-d array"));
        };
        decode(&e.data, n)
    }
}

pub mod array1 {
    use super::*;

    pub fn serialize<S: Serializer>(a: &Array1<f64>, s: S) -> Result<S::Ok, S::Error> {
        Encoded {
            shape: vec![a.len()],
            data: encode(a.iter().copied()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array1<f64>, D::Error> {
        super::vec::deserialize(d).map(Array1::from)
    }
}

pub mod array2 {
    use super::*;

    pub fn serialize<S: Serializer>(a: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
        // `iter` walks in logical row-major order regardless of memory layout.
        Encoded {
            shape: a.shape().to_vec(),
            data: encode(a.iter().copied()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
        let e = Encoded::deserialize(d)?;
        let [r, c] = e.shape[..] else {
            return Err(D::Error::custom("expected a 2-d array"));
        };
        let values = decode(&e.data, r * c)?;
        Array2::from_shape_vec((r, c), values).map_err(D::Error::custom)
    }
}
