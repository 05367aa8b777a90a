//! Binary model checkpoints: a JSON header describing the model followed by
//! raw little-endian tensor payloads. Serialization is byte-deterministic so
//! identical models produce identical files.

use super::model::{ModelConfig, TwoStreamModel};
use super::train::EpochRecord;
use super::HarError;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 7] = b"FDCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    epoch: usize,
    history: Vec<EpochRecord>,
    params: Vec<ParamEntry>,
}

#[derive(Clone, Debug)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    /// `(name, shape, trainable, values)` in model parameter order.
    pub params: Vec<(String, Vec<usize>, bool, Vec<f64>)>,
}

impl ModelCheckpoint {
    pub fn from_model(model: &TwoStreamModel, epoch: usize, history: &[EpochRecord]) -> Self {
        Self {
            config: model.cfg.clone(),
            epoch,
            history: history.to_vec(),
            params: model
                .params
                .iter()
                .map(|p| {
                    (
                        p.name.clone(),
                        p.tensor.shape().to_vec(),
                        p.trainable,
                        p.tensor.data().to_vec(),
                    )
                })
                .collect(),
        }
    }

    /// Rebuild the model. Checkpoint parameters must match the freshly
    /// constructed model name for name and shape for shape; anything else is
    /// a corrupt or incompatible checkpoint.
    pub fn into_model(&self) -> Result<TwoStreamModel, HarError> {
        let mut model = TwoStreamModel::new(self.config.clone())?;
        if self.params.len() != model.params.len() {
            return Err(HarError::Checkpoint(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                model.params.len()
            )));
        }
        for ((name, shape, trainable, values), param) in
            self.params.iter().zip(model.params.iter_mut())
        {
            if name != &param.name {
                return Err(HarError::Checkpoint(format!(
                    "parameter order mismatch: {name} where {} expected",
                    param.name
                )));
            }
            if shape != param.tensor.shape() {
                return Err(HarError::Checkpoint(format!(
                    "parameter {name} has shape {shape:?}, model expects {:?}",
                    param.tensor.shape()
                )));
            }
            param.tensor.data_mut().copy_from_slice(values);
            param.trainable = *trainable;
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: FORMAT_VERSION,
            config: self.config.clone(),
            epoch: self.epoch,
            history: self.history.clone(),
            params: self
                .params
                .iter()
                .map(|(name, shape, trainable, _)| ParamEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                    trainable: *trainable,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serialization cannot fail");

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, shape, _, values) in &self.params {
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HarError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len())?;
        if magic != MAGIC {
            return Err(HarError::Checkpoint("bad magic, not a checkpoint".into()));
        }
        let json_len = r.u32()? as usize;
        let json = r.take(json_len)?;
        let header: Header = serde_json::from_slice(json)
            .map_err(|e| HarError::Checkpoint(format!("corrupt header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(HarError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                header.version
            )));
        }

        let mut params = Vec::with_capacity(header.params.len());
        for entry in &header.params {
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            if shape != entry.shape {
                return Err(HarError::Checkpoint(format!(
                    "payload shape {shape:?} disagrees with header {:?} for {}",
                    entry.shape, entry.name
                )));
            }
            let n: usize = shape.iter().product();
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                let raw = r.take(8)?;
                values.push(f64::from_le_bytes(raw.try_into().unwrap()));
            }
            params.push((entry.name.clone(), shape, entry.trainable, values));
        }
        if r.pos != bytes.len() {
            return Err(HarError::Checkpoint(format!(
                "{} trailing bytes after payload",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            config: header.config,
            epoch: header.epoch,
            history: header.history,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), HarError> {
        fs::write(path, self.to_bytes()).map_err(|source| HarError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarError> {
        let bytes = fs::read(path).map_err(|source| HarError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HarError> {
        if self.pos + n > self.bytes.len() {
            return Err(HarError::Checkpoint(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, HarError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
