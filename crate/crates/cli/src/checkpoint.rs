//! Checkpoint file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "DHVT"
//! version u32      currently 1
//! cfg_len u32      followed by the model config as UTF-8 JSON
//! count   u32      number of tensor records, then per tensor:
//!   name_len u32 + UTF-8 name
//!   flags    u8   bit0 = trainable
//!   dtype    u8   0 = f32, 1 = f64
//!   rank     u32
//!   extents  u64 * rank
//!   values   raw little-endian scalars
//! crc32   u32      IEEE CRC over every byte after the magic
//! ```
//!
//! A round trip is bit-exact and preserves tensor order. Any flipped payload
//! byte fails the CRC.

use std::path::Path;

use dhvt_core::model::ModelConfig;
use dhvt_core::params::ParamStore;
use dhvt_core::tensor::{Dtype, Element, Tensor};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"DHVT";
pub const VERSION: u32 = 1;

/// A loaded store in whichever dtype the file carried.
#[derive(Debug)]
pub enum LoadedStore {
    F32(ParamStore<f32>),
    F64(ParamStore<f64>),
}

impl LoadedStore {
    pub fn dtype(&self) -> Dtype {
        match self {
            LoadedStore::F32(_) => Dtype::F32,
            LoadedStore::F64(_) => Dtype::F64,
        }
    }
}

pub fn save_checkpoint<E: Element>(
    store: &ParamStore<E>,
    cfg: &ModelConfig,
    path: &Path,
) -> Result<()> {
    let bytes = encode(store, cfg)?;
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn encode<E: Element>(store: &ParamStore<E>, cfg: &ModelConfig) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    payload.extend_from_slice(&VERSION.to_le_bytes());
    let cfg_json = serde_json::to_vec(cfg)
        .map_err(|e| CliError::Format(format!("config serialization failed: {e}")))?;
    payload.extend_from_slice(&(cfg_json.len() as u32).to_le_bytes());
    payload.extend_from_slice(&cfg_json);
    payload.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, entry) in store.iter() {
        payload.extend_from_slice(&(name.len() as u32).to_le_bytes());
        payload.extend_from_slice(name.as_bytes());
        payload.push(entry.trainable as u8);
        payload.push(match E::DTYPE {
            Dtype::F32 => 0u8,
            Dtype::F64 => 1u8,
        });
        let shape = entry.tensor.shape();
        payload.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &extent in shape {
            payload.extend_from_slice(&(extent as u64).to_le_bytes());
        }
        for &v in entry.tensor.data() {
            v.append_le_bytes(&mut payload);
        }
    }
    let crc = crc32fast::hash(&payload);
    let mut out = Vec::with_capacity(4 + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, LoadedStore)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes)
}

/// Decode and verify the tensor table against the embedded config.
pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, LoadedStore)> {
    let (cfg, store) = decode_raw(bytes)?;
    validate_against_config(&cfg, &store)?;
    Ok((cfg, store))
}

/// Decode the container without the config consistency check. The format is
/// self-contained, so files with arbitrary tensor tables (including none)
/// still parse.
pub fn decode_raw(bytes: &[u8]) -> Result<(ModelConfig, LoadedStore)> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(CliError::Format("bad magic: not a checkpoint file".into()));
    }
    let payload = &bytes[4..bytes.len() - 4];
    let stored_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let crc = crc32fast::hash(payload);
    if crc != stored_crc {
        return Err(CliError::Format(format!(
            "crc mismatch: stored {stored_crc:#010x}, computed {crc:#010x}"
        )));
    }
    let mut r = Reader {
        buf: payload,
        pos: 0,
    };
    let version = r.u32()?;
    if version != VERSION {
        return Err(CliError::Format(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let cfg_len = r.u32()? as usize;
    let cfg_bytes = r.take(cfg_len)?;
    let cfg: ModelConfig = serde_json::from_slice(cfg_bytes)
        .map_err(|e| CliError::Format(format!("config JSON invalid: {e}")))?;
    let count = r.u32()? as usize;

    // Peek the first tensor's dtype tag to dispatch; a mixed file errors.
    let mut dtype_tag: Option<u8> = None;
    let store = {
        struct Raw {
            name: String,
            trainable: bool,
            shape: Vec<usize>,
            data_offset: usize,
            numel: usize,
        }
        let mut raws = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|e| CliError::Format(format!("tensor name not UTF-8: {e}")))?;
            let flags = r.u8()?;
            let tag = r.u8()?;
            match dtype_tag {
                None => dtype_tag = Some(tag),
                Some(t) if t == tag => {}
                Some(t) => {
                    return Err(CliError::Consistency(format!(
                        "mixed dtypes in file: {t} then {tag} at tensor {name}"
                    )))
                }
            }
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let width = match tag {
                0 => 4,
                1 => 8,
                other => return Err(CliError::Format(format!("unknown dtype tag {other}"))),
            };
            let data_offset = r.pos;
            r.take(numel * width)?;
            raws.push(Raw {
                name,
                trainable: flags & 1 != 0,
                shape,
                data_offset,
                numel,
            });
        }
        if r.pos != payload.len() {
            return Err(CliError::Format(format!(
                "{} trailing bytes after the tensor table",
                payload.len() - r.pos
            )));
        }

        fn build<E: Element>(payload: &[u8], raws: &[Raw]) -> Result<ParamStore<E>> {
            let width = E::DTYPE.size_bytes();
            let mut store = ParamStore::new();
            for raw in raws {
                let mut data = Vec::with_capacity(raw.numel);
                for i in 0..raw.numel {
                    let at = raw.data_offset + i * width;
                    data.push(E::from_le_slice(&payload[at..at + width]));
                }
                let tensor = Tensor::new(raw.shape.clone(), data).map_err(CliError::Core)?;
                store
                    .insert(raw.name.clone(), tensor, raw.trainable)
                    .map_err(CliError::Core)?;
            }
            Ok(store)
        }

        match dtype_tag {
            Some(0) => LoadedStore::F32(build::<f32>(payload, &raws)?),
            Some(1) => LoadedStore::F64(build::<f64>(payload, &raws)?),
            None => LoadedStore::F32(ParamStore::new()),
            Some(other) => return Err(CliError::Format(format!("unknown dtype tag {other}"))),
        }
    };
    Ok((cfg, store))
}

/// The tensor table must name exactly the tensors the config implies.
fn validate_against_config(cfg: &ModelConfig, store: &LoadedStore) -> Result<()> {
    let expected = dhvt_core::build_model::<f32>(cfg, 0).map_err(CliError::Core)?;
    let loaded_names: Vec<String> = match store {
        LoadedStore::F32(s) => s.iter().map(|(n, _)| n.to_string()).collect(),
        LoadedStore::F64(s) => s.iter().map(|(n, _)| n.to_string()).collect(),
    };
    let expected_names: Vec<String> = expected.iter().map(|(n, _)| n.to_string()).collect();
    if loaded_names.len() != expected_names.len() {
        return Err(CliError::Consistency(format!(
            "tensor count mismatch: file has {}, config implies {}",
            loaded_names.len(),
            expected_names.len()
        )));
    }
    for (a, b) in loaded_names.iter().zip(&expected_names) {
        if a != b {
            return Err(CliError::Consistency(format!(
                "tensor name mismatch: file has {a}, config implies {b}"
            )));
        }
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CliError::Format(format!(
                "unexpected end of file: wanted {n} bytes at offset {}, have {}",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
