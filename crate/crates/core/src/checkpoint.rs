//! Self-describing binary checkpoints.
//!
//! Layout: magic `EQVCKPT\0`, format version (u32 LE), JSON header length
//! (u64 LE), the JSON header, then every array as f64 little-endian values.
//! The header carries the model configuration and, per array, its name,
//! shape, offset (in values) and trainable flag. Optimizer moments are stored
//! as extra arrays named `optimizer.m.<param>` and `optimizer.v.<param>`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::train::AdamState;

pub const MAGIC: &[u8; 8] = b"EQVCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<AdamState>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    arrays: Vec<ArrayEntry>,
    #[serde(default)]
    optimizer_step: Option<u64>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Data(format!("invalid checkpoint: {}", msg.into()))
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Checkpoint { model, optimizer: None }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let mut arrays = Vec::new();
        let mut data: Vec<&Tensor> = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, t: &'_ Tensor, trainable: bool, arrays: &mut Vec<ArrayEntry>| {
            arrays.push(ArrayEntry {
                name,
                shape: t.shape().to_vec(),
                offset,
                trainable,
            });
            offset += t.len();
        };
        for (k, (name, t)) in params.names().iter().zip(params.tensors()).enumerate() {
            push(name.clone(), t, params.is_trainable(k), &mut arrays);
            data.push(t);
        }
        if let Some(opt) = &self.optimizer {
            for (prefix, moments) in [("m", &opt.m), ("v", &opt.v)] {
                for (name, t) in params.names().iter().zip(moments) {
                    push(format!("optimizer.{prefix}.{name}"), t, false, &mut arrays);
                    data.push(t);
                }
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.model.config().clone(),
            arrays,
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in data {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("missing magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let body = &bytes[20..];
        let header_len = usize::try_from(header_len)
            .ok()
            .filter(|&n| n <= body.len())
            .ok_or_else(|| corrupt("header length exceeds file size"))?;
        let header: Header =
            serde_json::from_slice(&body[..header_len]).map_err(|e| corrupt(format!("header: {e}")))?;
        if header.format_version != version {
            return Err(corrupt("header and preamble versions disagree"));
        }
        let payload = &body[header_len..];
        if !payload.len().is_multiple_of(8) {
            return Err(corrupt("payload is not a whole number of f64 values"));
        }
        let values = payload.len() / 8;

        let read = |entry: &ArrayEntry| -> Result<Tensor> {
            let len = entry
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| corrupt(format!("shape of `{}` overflows", entry.name)))?;
            let end = entry
                .offset
                .checked_add(len)
                .filter(|&e| e <= values)
                .ok_or_else(|| corrupt(format!("array `{}` lies outside the payload", entry.name)))?;
            let data = payload[entry.offset * 8..end * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Tensor::new(entry.shape.clone(), data)
        };

        let mut model = Model::new(header.config, 0)?;
        let names = model.params().names().to_vec();
        let find = |name: &str| header.arrays.iter().find(|a| a.name == name);
        let param_entries = header.arrays.iter().filter(|a| !a.name.starts_with("optimizer."));
        if param_entries.count() != names.len() {
            return Err(corrupt("parameter count does not match the configuration"));
        }
        for name in &names {
            let entry = find(name).ok_or_else(|| corrupt(format!("missing array `{name}`")))?;
            model.params_mut().set(name, read(entry)?)?;
        }
        let optimizer = match header.optimizer_step {
            None => None,
            Some(step) => {
                let moments = |prefix: &str| -> Result<Vec<Tensor>> {
                    names
                        .iter()
                        .map(|name| {
                            let key = format!("optimizer.{prefix}.{name}");
                            let entry = find(&key).ok_or_else(|| corrupt(format!("missing array `{key}`")))?;
                            let t = read(entry)?;
                            if t.shape() != model.params().get(name).unwrap().shape() {
                                return Err(corrupt(format!("array `{key}` has the wrong shape")));
                            }
                            Ok(t)
                        })
                        .collect()
                };
                let m = moments("m")?;
                let v = moments("v")?;
                Some(AdamState { step, m, v })
            }
        };
        Ok(Checkpoint { model, optimizer })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
