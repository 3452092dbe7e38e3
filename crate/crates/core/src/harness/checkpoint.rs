//! Checkpoint files: one line of compact JSON header, a newline, then the
//! parameter vector as raw little-endian `f64`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{MlpConfig, MlpParams};
use crate::numerics::Vec64;

pub const CHECKPOINT_FORMAT: &str = "avglab-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const FLATTENING: &str = "per layer: weights row-major [out][in], then biases";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub model: MlpConfig,
    pub flattening: String,
    pub len: usize,
    pub step: u64,
    pub epoch: u64,
    /// `fast` or `averaged`.
    pub kind: String,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec64,
}

impl Checkpoint {
    pub fn new(params: &MlpParams, step: u64, epoch: u64, kind: &str, seed: u64, config_hash: &str) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.into(),
                version: CHECKPOINT_VERSION,
                model: params.config().clone(),
                flattening: FLATTENING.into(),
                len: params.flat().len(),
                step,
                epoch,
                kind: kind.into(),
                seed,
                config_hash: config_hash.into(),
            },
            params: params.flatten(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        out.reserve(8 * self.params.len());
        for v in self.params.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::Shape("checkpoint has no header line".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])?;
        if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
            return Err(Error::Shape(format!(
                "unsupported checkpoint format {} v{}",
                header.format, header.version
            )));
        }
        let body = &bytes[nl + 1..];
        if body.len() != 8 * header.len {
            return Err(Error::Shape(format!(
                "checkpoint body holds {} bytes, header promises {} values",
                body.len(),
                header.len
            )));
        }
        if header.model.param_count() != header.len {
            return Err(Error::Shape(format!(
                "checkpoint model needs {} values, header says {}",
                header.model.param_count(),
                header.len
            )));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Checkpoint {
            header,
            params: Vec64(params),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Parameters for `model`; a different architecture is a shape error.
    pub fn params_for(&self, model: &MlpConfig) -> Result<MlpParams> {
        if &self.header.model != model {
            return Err(Error::Shape(format!(
                "checkpoint model {:?} does not match configured model {:?}",
                self.header.model.layer_sizes, model.layer_sizes
            )));
        }
        MlpParams::unflatten(model.clone(), self.params.clone())
    }
}
