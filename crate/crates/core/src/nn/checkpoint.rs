//! Versioned JSON checkpoints: the encoder config plus every parameter
//! tensor with its name and shape. Loading validates each tensor against
//! the shapes the config implies, naming both sides on a mismatch.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{nn_err, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: EncoderConfig,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_params(config: EncoderConfig, params: &EncoderParams) -> Self {
        let mut tensors = Vec::new();
        params.visit(|name, shape, values| {
            tensors.push(NamedTensor {
                name,
                shape,
                data: values.collect(),
            });
        });
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config,
            tensors,
        }
    }

    /// Rebuilds parameters, checking names and shapes against the config.
    pub fn into_params(self) -> Result<(EncoderConfig, EncoderParams)> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return nn_err(format!(
                "unsupported checkpoint format_version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                self.format_version
            ));
        }
        let mut params = EncoderParams::init(&self.config)?;
        let mut expected = Vec::new();
        params.visit(|name, shape, _| expected.push((name, shape)));
        if expected.len() != self.tensors.len() {
            return nn_err(format!(
                "checkpoint holds {} tensors, config implies {}",
                self.tensors.len(),
                expected.len()
            ));
        }
        let mut flat = Vec::new();
        for (tensor, (ename, eshape)) in self.tensors.iter().zip(&expected) {
            if &tensor.name != ename || &tensor.shape != eshape {
                return nn_err(format!(
                    "checkpoint tensor {} has shape {:?}, config expects {} with shape {:?}",
                    tensor.name, tensor.shape, ename, eshape
                ));
            }
            let len: usize = tensor.shape.iter().product();
            if tensor.data.len() != len {
                return nn_err(format!(
                    "checkpoint tensor {} has {} values for shape {:?}",
                    tensor.name,
                    tensor.data.len(),
                    tensor.shape
                ));
            }
            flat.extend_from_slice(&tensor.data);
        }
        params.assign_from_flat(&flat);
        Ok((self.config, params))
    }
}

pub fn save_checkpoint(path: &Path, cfg: &EncoderConfig, params: &EncoderParams) -> Result<()> {
    let ckpt = Checkpoint::from_params(*cfg, params);
    let bytes = serde_json::to_vec(&ckpt).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(EncoderConfig, EncoderParams)> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let ckpt: Checkpoint =
        serde_json::from_slice(&bytes).map_err(|e| Error::Format(e.to_string()))?;
    ckpt.into_params()
}
