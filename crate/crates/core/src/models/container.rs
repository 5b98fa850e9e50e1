//! Flat binary tensor container with a JSON header.
//!
//! Layout: the 8-byte magic `TRACEBIN`, the header length as a little-endian
//! `u64`, the UTF-8 JSON header, then every tensor's `f64` values in
//! little-endian order. The header's `tensors` array lists `name` and
//! `shape` for each block in file order.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TRACEBIN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Tensor {
            name: name.into(),
            shape,
            data,
        }
    }
}

pub fn is_container(bytes: &[u8]) -> bool {
    bytes.starts_with(MAGIC)
}

/// Encodes `meta` (a JSON object) plus tensors. `meta` must not already
/// contain a `tensors` key.
pub fn encode(meta: Value, tensors: &[Tensor]) -> Result<Vec<u8>> {
    let Value::Object(mut header) = meta else {
        return Err(Error::invalid("container header must be a JSON object"));
    };
    let infos: Vec<TensorInfo> = tensors
        .iter()
        .map(|t| {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::invalid(format!("tensor {:?} shape does not match data", t.name)));
            }
            Ok(TensorInfo {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
        })
        .collect::<Result<_>>()?;
    header.insert("tensors".into(), serde_json::to_value(infos)?);
    let header = serde_json::to_vec(&Value::Object(header))?;
    let n: usize = tensors.iter().map(|t| t.data.len()).sum();
    let mut out = Vec::with_capacity(16 + header.len() + 8 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes a container into its header (with `tensors` removed) and tensors.
pub fn decode(bytes: &[u8]) -> Result<(Value, Vec<Tensor>)> {
    let bad = |m: &str| Error::invalid(format!("malformed tensor container: {m}"));
    if !is_container(bytes) || bytes.len() < 16 {
        return Err(bad("missing magic"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body_start = 16usize.checked_add(header_len).ok_or_else(|| bad("header length overflow"))?;
    if bytes.len() < body_start {
        return Err(bad("truncated header"));
    }
    let mut header: Value = serde_json::from_slice(&bytes[16..body_start])?;
    let infos: Vec<TensorInfo> = match header.as_object_mut().and_then(|o| o.remove("tensors")) {
        Some(v) => serde_json::from_value(v)?,
        None => return Err(bad("header lacks tensors")),
    };
    let mut body = &bytes[body_start..];
    let mut tensors = Vec::with_capacity(infos.len());
    for info in infos {
        let n: usize = info.shape.iter().product();
        if body.len() < 8 * n {
            return Err(bad("truncated tensor data"));
        }
        let data = body[..8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        body = &body[8 * n..];
        tensors.push(Tensor {
            name: info.name,
            shape: info.shape,
            data,
        });
    }
    if !body.is_empty() {
        return Err(bad("trailing bytes"));
    }
    Ok((header, tensors))
}
