//! Checkpoint container.
//!
//! Layout: 8-byte magic `BPCKPT\0\0`, u32 LE format version, u32 LE header
//! length, JSON header (config, epoch, losses, parameter count), then every
//! parameter as f64 LE in [`Weights::tensors`] order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelError, Weights};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"BPCKPT\0\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub config: ModelConfig,
    pub weights: Weights,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    epoch: usize,
    // NaN (not yet measured) is stored as null.
    train_loss: Option<f64>,
    val_loss: Option<f64>,
    num_params: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let header = serde_json::to_vec(&Header {
            config: self.config,
            epoch: self.epoch,
            train_loss: Some(self.train_loss).filter(|v| v.is_finite()),
            val_loss: Some(self.val_loss).filter(|v| v.is_finite()),
            num_params: self.weights.num_params(),
        })?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.weights.num_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.weights.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::BadCheckpoint(m.to_string());
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|_| bad("truncated version"))?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::BadCheckpoint(format!("unsupported version {version}")));
        }
        r.read_exact(&mut word).map_err(|_| bad("truncated header length"))?;
        let header_len = u32::from_le_bytes(word) as usize;
        if r.len() < header_len {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&r[..header_len])?;
        r = &r[header_len..];
        header.config.validate()?;
        let mut weights = Weights::zeros(&header.config);
        if weights.num_params() != header.num_params || r.len() != 8 * header.num_params {
            return Err(bad("parameter block does not match config"));
        }
        let values: Vec<f64> = r
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        weights.load_flat(&values);
        Ok(Self {
            epoch: header.epoch,
            config: header.config,
            weights,
            train_loss: header.train_loss.unwrap_or(f64::NAN),
            val_loss: header.val_loss.unwrap_or(f64::NAN),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 over the parameter bytes only.
    pub fn parameter_checksum(&self) -> String {
        let mut h = Sha256::new();
        for t in self.weights.tensors() {
            for v in t {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn file_name(epoch: usize) -> String {
        format!("epoch_{epoch:03}.ckpt")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> Checkpoint {
        let config = ModelConfig { num_layers: 1, hidden_dim: 8, num_heads: 2, ffn_dim: 8, max_len: 8, vocab_size: 10, seed: 4 };
        Checkpoint { epoch: 3, config, weights: Weights::init(&config), train_loss: 1.25, val_loss: 0.1 + 0.2 }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let c = ckpt();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.val_loss.to_bits(), c.val_loss.to_bits());
        assert_eq!(back.parameter_checksum(), c.parameter_checksum());
    }

    #[test]
    fn corrupt_files_rejected() {
        let bytes = ckpt().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"garbage!").is_err());
        let mut fresh = ckpt();
        fresh.train_loss = f64::NAN;
        let back = Checkpoint::from_bytes(&fresh.to_bytes().unwrap()).unwrap();
        assert!(back.train_loss.is_nan());
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 99;
        assert!(matches!(Checkpoint::from_bytes(&wrong_version), Err(ModelError::BadCheckpoint(_))));
    }
}
