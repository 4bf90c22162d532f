//! Binary model checkpoints with integrity hashing.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "PFLC" | version u32 | layer_count u32
//! per layer: rows u32 | cols u32 | weight f64[rows*cols]
//!            | bias_len u32 | bias f64[bias_len]
//! trailer: 32-byte SHA-256 of all preceding bytes
//! ```
//!
//! Activations are positional (ReLU on every layer but the last) and not
//! stored. Round-trips are bit-exact; any payload corruption fails the
//! trailing hash with a distinct integrity error.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use fedistill_core::model::{Activation, Layer, ModelParams};
use fedistill_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MAGIC: [u8; 4] = *b"PFLC";
pub const FORMAT_VERSION: u32 = 1;

/// Serializes parameters to the checkpoint byte layout.
pub fn encode(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.write_u32::<LittleEndian>(FORMAT_VERSION)
        .expect("vec write");
    out.write_u32::<LittleEndian>(params.num_layers() as u32)
        .expect("vec write");
    for layer in params.layers() {
        out.write_u32::<LittleEndian>(layer.weight.rows() as u32)
            .expect("vec write");
        out.write_u32::<LittleEndian>(layer.weight.cols() as u32)
            .expect("vec write");
        for &v in layer.weight.data() {
            out.write_f64::<LittleEndian>(v).expect("vec write");
        }
        out.write_u32::<LittleEndian>(layer.bias.numel() as u32)
            .expect("vec write");
        for &v in layer.bias.data() {
            out.write_f64::<LittleEndian>(v).expect("vec write");
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn integrity(path: &Path, msg: impl Into<String>) -> CliError {
    CliError::integrity(format!("{}: {}", path.display(), msg.into()))
}

/// Decodes checkpoint bytes, verifying the trailing hash.
pub fn decode(bytes: &[u8], path: &Path) -> Result<ModelParams> {
    if bytes.len() < MAGIC.len() + 8 + 32 {
        return Err(integrity(path, "checkpoint truncated"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(integrity(path, "checkpoint hash mismatch"));
    }
    if body[..4] != MAGIC {
        return Err(integrity(path, "bad checkpoint magic"));
    }
    let mut cur = Cursor::new(&body[4..]);
    let version = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| integrity(path, "checkpoint truncated"))?;
    if version != FORMAT_VERSION {
        return Err(integrity(
            path,
            format!("unsupported checkpoint version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    let layer_count = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| integrity(path, "checkpoint truncated"))? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for i in 0..layer_count {
        let rows = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| integrity(path, "checkpoint truncated"))? as usize;
        let cols = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| integrity(path, "checkpoint truncated"))? as usize;
        let mut weight = vec![0.0; rows * cols];
        for v in weight.iter_mut() {
            *v = cur
                .read_f64::<LittleEndian>()
                .map_err(|_| integrity(path, "checkpoint truncated"))?;
        }
        let bias_len = cur
            .read_u32::<LittleEndian>()
            .map_err(|_| integrity(path, "checkpoint truncated"))? as usize;
        let mut bias = vec![0.0; bias_len];
        for v in bias.iter_mut() {
            *v = cur
                .read_f64::<LittleEndian>()
                .map_err(|_| integrity(path, "checkpoint truncated"))?;
        }
        let activation = if i + 1 == layer_count {
            Activation::Identity
        } else {
            Activation::Relu
        };
        layers.push(Layer {
            weight: Tensor::matrix(rows, cols, weight)?,
            bias: Tensor::new(vec![bias_len], bias)?,
            activation,
        });
    }
    if cur.position() as usize != body.len() - 4 {
        return Err(integrity(path, "trailing bytes after layer payload"));
    }
    Ok(ModelParams::from_layers(layers)?)
}

pub fn save(path: &Path, params: &ModelParams) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| CliError::io(path.display().to_string(), e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    decode(&bytes, path)
}

/// SHA-256 of a whole file, hex-encoded; what the manifest records.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Index of the per-round checkpoints written by a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub rounds: Vec<ManifestEntry>,
    pub final_round: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub round: u32,
    pub file: String,
    pub sha256: String,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json).map_err(|e| CliError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::data(format!("{}: invalid manifest: {e}", path.display())))
    }

    /// Loads and hash-verifies every checkpoint listed.
    pub fn load_all(&self, dir: &Path) -> Result<Vec<(u32, ModelParams)>> {
        let mut out = Vec::with_capacity(self.rounds.len());
        for entry in &self.rounds {
            let path = dir.join(&entry.file);
            let actual = file_sha256(&path)?;
            if actual != entry.sha256 {
                return Err(CliError::integrity(format!(
                    "{}: file hash {actual} does not match manifest hash {}",
                    path.display(),
                    entry.sha256
                )));
            }
            out.push((entry.round, load(&path)?));
        }
        Ok(out)
    }
}
