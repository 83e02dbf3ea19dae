//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! "SEMB"                       magic
//! u32   version (= 1)
//! u32   header length n
//! [n]   UTF-8 JSON: {"encoder": EncoderConfig, "vocabulary": [token, ...]}
//! then, for every parameter in canonical order:
//!   u16 name length, name bytes, u8 ndim, u32 dims[ndim], f64 data[product(dims)]
//! ```
//!
//! `vocabulary` lists the non-reserved tokens in id order and may be absent.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{parameter_names, EncoderConfig, EncoderError, EncoderModel, EncoderParams};
use crate::tensor::Tensor;
use crate::tokenizer::Vocabulary;

pub const MAGIC: &[u8; 4] = b"SEMB";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint: bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] EncoderError),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    encoder: EncoderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocabulary: Option<Vec<String>>,
}

/// A model together with the vocabulary it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: EncoderModel,
    pub vocabulary: Option<Vocabulary>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            encoder: self.model.config().clone(),
            vocabulary: self.vocabulary.as_ref().map(|v| v.content_tokens().to_vec()),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let names = parameter_names(self.model.config());
        for (name, tensor) in names.iter().zip(self.model.params().iter()) {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(tensor.shape().len() as u8);
            for &d in tensor.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let header_len = r.u32("header length")? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
            .map_err(|e| CheckpointError::Malformed(format!("header json: {e}")))?;
        header.encoder.validate()?;

        let names = parameter_names(&header.encoder);
        let mut tensors = Vec::with_capacity(names.len());
        for expected in &names {
            let name_len = r.u16("parameter name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
                .map_err(|_| CheckpointError::Malformed("parameter name is not UTF-8".into()))?;
            if name != expected {
                return Err(CheckpointError::Malformed(format!(
                    "expected parameter {expected}, found {name}"
                )));
            }
            let ndim = r.take(1, "ndim")?[0] as usize;
            let shape = (0..ndim)
                .map(|_| r.u32("dims").map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let count: usize = shape.iter().product();
            let raw = r.take(count * 8, "parameter data")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
            tensors.push(tensor);
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!(
                "{} trailing bytes after last parameter",
                bytes.len() - r.pos
            )));
        }
        let params = EncoderParams::from_ordered(header.encoder.num_layers, tensors).expect("count matches names");
        let model = EncoderModel::from_params(header.encoder, params)?;
        Ok(Checkpoint {
            model,
            vocabulary: header.vocabulary.map(Vocabulary::from_tokens),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn save_checkpoint(model: &EncoderModel, path: &Path) -> Result<(), CheckpointError> {
    Checkpoint {
        model: model.clone(),
        vocabulary: None,
    }
    .save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(EncoderModel, EncoderConfig), CheckpointError> {
    let ckpt = Checkpoint::load(path)?;
    let config = ckpt.model.config().clone();
    Ok((ckpt.model, config))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }
}
