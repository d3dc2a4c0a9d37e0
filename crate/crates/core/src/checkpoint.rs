//! Binary checkpoint container.
//!
//! Layout:
//!
//! ```text
//! magic    8 bytes  "S2TCKPT\0"
//! version  u32 LE
//! hlen     u64 LE   length of the JSON header
//! header   hlen bytes of UTF-8 JSON
//! payload  parameter data, little endian, in header order
//! ```
//!
//! The header holds the model config, both vocabularies, the element type,
//! each parameter's name, shape and byte offset, and a SHA-256 of the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Graph2Seq, ModelConfig};
use crate::tensor::{ParameterStore, Real, Tensor};
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 8] = b"S2TCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    config: ModelConfig,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    params: Vec<ParamEntry>,
    payload_sha256: String,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_bytes<T: Real>(model: &Graph2Seq<T>) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut params = Vec::new();
    for id in model.params.ids() {
        let value = model.params.value(id);
        params.push(ParamEntry {
            name: model.params.name(id).to_string(),
            shape: value.shape().to_vec(),
            offset: payload.len(),
        });
        for &x in value.data() {
            x.write_le(&mut payload);
        }
    }
    let header = Header {
        dtype: T::DTYPE.to_string(),
        config: model.config.clone(),
        src_vocab: model.src_vocab.clone(),
        tgt_vocab: model.tgt_vocab.clone(),
        params,
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let header = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(20 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<Graph2Seq<T>> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}, expected {VERSION}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let hend = usize::try_from(hlen)
        .ok()
        .and_then(|h| h.checked_add(20))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[20..hend]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    if header.dtype != T::DTYPE {
        return Err(corrupt(format!(
            "checkpoint holds {} parameters, requested {}",
            header.dtype,
            T::DTYPE
        )));
    }
    let payload = &bytes[hend..];
    if hex(&Sha256::digest(payload)) != header.payload_sha256 {
        return Err(corrupt("payload checksum mismatch"));
    }
    let mut store = ParameterStore::new();
    let mut expected_offset = 0;
    for p in &header.params {
        let n: usize = p.shape.iter().product();
        let end = p.offset + n * T::BYTES;
        if p.offset != expected_offset || end > payload.len() {
            return Err(corrupt(format!("parameter {:?} lies outside the payload", p.name)));
        }
        let data = payload[p.offset..end].chunks_exact(T::BYTES).map(T::read_le).collect();
        store.add(p.name.clone(), Tensor::new(p.shape.clone(), data)?);
        expected_offset = end;
    }
    if expected_offset != payload.len() {
        return Err(corrupt("trailing bytes after the last parameter"));
    }
    Graph2Seq::from_parts(header.config, header.src_vocab, header.tgt_vocab, store)
}

pub fn save_checkpoint<T: Real>(model: &Graph2Seq<T>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Graph2Seq<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// A loaded model in whichever precision the file was written with.
#[derive(Clone, Debug)]
pub enum AnyModel {
    F32(Graph2Seq<f32>),
    F64(Graph2Seq<f64>),
}

pub fn load_any(path: &Path) -> Result<AnyModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match from_bytes::<f32>(&bytes) {
        Ok(m) => Ok(AnyModel::F32(m)),
        Err(Error::Checkpoint(msg)) if msg.contains("holds f64") => from_bytes::<f64>(&bytes).map(AnyModel::F64),
        Err(e) => Err(e),
    }
}

/// Loads a checkpoint and checks that its architecture matches `expected`.
pub fn load_checkpoint_for<T: Real>(path: &Path, expected: &ModelConfig) -> Result<Graph2Seq<T>> {
    let model = load_checkpoint::<T>(path)?;
    let got = &model.config;
    let checks = [
        ("word_dim", got.word_dim, expected.word_dim),
        ("hidden_dim", got.encoder.hidden_dim, expected.encoder.hidden_dim),
        ("hop_size", got.encoder.hop_size, expected.encoder.hop_size),
        ("hidden_size", got.decoder.hidden_size, expected.decoder.hidden_size),
    ];
    for (key, have, want) in checks {
        if have != want {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {key}={have} but the configuration asks for {want}"
            )));
        }
    }
    if got.encoder.ge_method != expected.encoder.ge_method
        || got.encoder.share_direction_weights != expected.encoder.share_direction_weights
        || got.decoder.attention != expected.decoder.attention
    {
        return Err(Error::Checkpoint(
            "checkpoint architecture differs from the configuration".into(),
        ));
    }
    Ok(model)
}
