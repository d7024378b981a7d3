//! Named-tensor checkpoints.
//!
//! ```text
//! header_len: u64 LE | header: UTF-8 JSON | payload: f64 LE ...
//! ```
//!
//! The header lists every tensor's name, shape and byte offset into the
//! payload, plus free-form metadata (the model spec for model checkpoints).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn encode_tensors(tensors: &[(String, &Tensor)], metadata: serde_json::Value) -> Result<Vec<u8>> {
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 8 * t.len();
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        tensors: entries,
        metadata,
    })?;
    let mut out = Vec::with_capacity(8 + header.len() + offset);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_tensors(bytes: &[u8]) -> Result<(Header, Vec<(String, Tensor)>)> {
    let bad = |m: String| Error::Checkpoint(m);
    if bytes.len() < 8 {
        return Err(bad("file shorter than its length prefix".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let header_end = 8usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad(format!("header of {hlen} bytes runs past end of file")))?;
    let header: Header = serde_json::from_slice(&bytes[8..header_end])?;
    let payload = &bytes[header_end..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let n: usize = e.shape.iter().product();
        let end = e
            .offset
            .checked_add(8 * n)
            .filter(|&end| end <= payload.len())
            .ok_or_else(|| bad(format!("tensor {} runs past end of payload", e.name)))?;
        let data = payload[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
    }
    Ok((header, tensors))
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let named = model.named_params();
    let meta = serde_json::json!({ "model": model.spec() });
    write_atomic(path, &encode_tensors(&named, meta)?)
}

/// Rebuilds the model from the spec stored in the header and loads its tensors.
pub fn load_model(path: &Path) -> Result<Model> {
    let (header, tensors) = decode_tensors(&fs::read(path)?)?;
    let spec: ModelSpec = serde_json::from_value(
        header
            .metadata
            .get("model")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("no model spec in header".into()))?,
    )?;
    let mut model = Model::new(spec, 0)?;
    load_into(&mut model, &tensors)?;
    Ok(model)
}

/// Copies tensors into `model`, matching names and shapes exactly.
pub fn load_into(model: &mut Model, tensors: &[(String, Tensor)]) -> Result<()> {
    let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    if names.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "model has {} tensors, checkpoint has {}",
            names.len(),
            tensors.len()
        )));
    }
    for ((name, p), (cname, t)) in names.iter().zip(model.params_mut()).zip(tensors) {
        if name != cname {
            return Err(Error::Checkpoint(format!("expected tensor {name}, found {cname}")));
        }
        t.ensure_shape(p.shape(), name)?;
        p.data_mut().copy_from_slice(t.data());
    }
    Ok(())
}
