//! Checkpoint documents.
//!
//! A checkpoint is a single JSON object:
//!
//! ```text
//! {
//!   "format": "matinfo-checkpoint",
//!   "version": 1,
//!   "architecture": { "input_dim", "hidden", "classes", "activation", "head" },
//!   "tensors": [ { "name", "shape": [rows, cols], "encoding": "f64-le-base64", "data" } ],
//!   "config": { ...training configuration... },
//!   "step": 2000,
//!   "rng_digest": "<sha-256 hex>"
//! }
//! ```
//!
//! Tensor payloads are the row-major IEEE-754 doubles in little-endian byte
//! order, base64 encoded (standard alphabet, padded), so values round-trip
//! bit for bit.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::model::{Architecture, ModelParams, Tensor};
use super::TrainConfig;
use crate::error::{Error, Result};

pub const FORMAT: &str = "matinfo-checkpoint";
pub const VERSION: u32 = 1;
pub const ENCODING: &str = "f64-le-base64";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub step: usize,
    pub rng_digest: String,
}

#[derive(Serialize, Deserialize)]
struct TensorDoc {
    name: String,
    shape: [usize; 2],
    encoding: String,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    format: String,
    version: u32,
    architecture: Architecture,
    tensors: Vec<TensorDoc>,
    config: TrainConfig,
    step: usize,
    rng_digest: String,
}

fn encode(data: &[f64]) -> String {
    let bytes: Vec<u8> = data.iter().flat_map(|x| x.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(name: &str, s: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint(format!(
            "tensor {name}: payload of {} bytes is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        let doc = CheckpointDoc {
            format: FORMAT.into(),
            version: VERSION,
            architecture: self.params.arch.clone(),
            tensors: self
                .params
                .tensors
                .iter()
                .map(|t| TensorDoc {
                    name: t.name.clone(),
                    shape: t.shape,
                    encoding: ENCODING.into(),
                    data: encode(&t.data),
                })
                .collect(),
            config: self.config.clone(),
            step: self.step,
            rng_digest: self.rng_digest.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CheckpointDoc =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if doc.format != FORMAT || doc.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {} v{}",
                doc.format, doc.version
            )));
        }
        let tensors = doc
            .tensors
            .into_iter()
            .map(|t| {
                if t.encoding != ENCODING {
                    return Err(Error::Checkpoint(format!(
                        "tensor {}: unknown encoding {}",
                        t.name, t.encoding
                    )));
                }
                let data = decode(&t.name, &t.data)?;
                Ok(Tensor {
                    name: t.name,
                    shape: t.shape,
                    data,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let params = ModelParams {
            arch: doc.architecture,
            tensors,
        };
        params.validate()?;
        Ok(Self {
            params,
            config: doc.config,
            step: doc.step,
            rng_digest: doc.rng_digest,
        })
    }
}
