//! Binary checkpoint format.
//!
//! Layout: one version byte, a little-endian u32 header length, a JSON
//! header, a little-endian u64 parameter count, then the flattened
//! parameters as little-endian f64. The f64 bytes round-trip bit-exactly.

use super::config::Task;
use super::data::Standardizer;
use crate::net::{Activation, MlpArchitecture, ParameterSet};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const CHECKPOINT_VERSION: u8 = 1;

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub task: Task,
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub dropout: Vec<f64>,
    pub tau: f64,
    /// Feature/target standardisation fitted on the training split
    /// (regression only).
    pub feature_standardizer: Option<Standardizer>,
    pub target_standardizer: Option<Standardizer>,
    pub config_hash: u64,
    pub epoch: usize,
    pub seed: u64,
}

impl CheckpointMeta {
    pub fn architecture(&self) -> Result<MlpArchitecture> {
        MlpArchitecture::new(
            self.layer_widths.clone(),
            self.activations.clone(),
            self.dropout.clone(),
        )
    }
}

pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, params: &ParameterSet) -> Result<()> {
    let header = serde_json::to_vec(meta)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(&[CHECKPOINT_VERSION])?;
    file.write_all(&(header.len() as u32).to_le_bytes())?;
    file.write_all(&header)?;
    let flat = params.flatten();
    file.write_all(&(flat.len() as u64).to_le_bytes())?;
    for v in flat {
        file.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, ParameterSet)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut version = [0u8; 1];
    file.read_exact(&mut version)?;
    if version[0] != CHECKPOINT_VERSION {
        return Err(Error::Parse {
            row: 0,
            col: 0,
            msg: format!("checkpoint version {} unsupported", version[0]),
        });
    }
    let mut len_buf = [0u8; 4];
    file.read_exact(&mut len_buf)?;
    let header_len = u32::from_le_bytes(len_buf) as usize;
    let mut header = vec![0u8; header_len];
    file.read_exact(&mut header)?;
    let meta: CheckpointMeta = serde_json::from_slice(&header)?;
    let mut count_buf = [0u8; 8];
    file.read_exact(&mut count_buf)?;
    let count = u64::from_le_bytes(count_buf) as usize;
    let mut flat = Vec::with_capacity(count);
    let mut val = [0u8; 8];
    for _ in 0..count {
        file.read_exact(&mut val)?;
        flat.push(f64::from_le_bytes(val));
    }
    let arch = meta.architecture()?;
    let params = ParameterSet::from_flat(&arch, &flat)?;
    Ok((meta, params))
}
