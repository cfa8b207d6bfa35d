//! Binary checkpoint format.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, little-endian
//! `u64` manifest length, the JSON manifest, then every parameter block as
//! raw little-endian `f64` in registration order. The manifest records the
//! resolved configuration, normalizer, feature names, training rng state,
//! progress and a SHA-256 digest per block.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainingConfig;
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::model::Dlgan;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DLGANCKP";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

/// How far training has advanced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    /// 0 before training, 3 once joint training finished.
    pub phases_completed: u8,
    /// Epochs finished in the most recent phase.
    pub epoch: usize,
}

impl Progress {
    pub fn is_trained(&self) -> bool {
        self.phases_completed >= 3
    }
}

/// Everything needed to resume training or to synthesize.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    /// Fully resolved configuration.
    pub config: TrainingConfig,
    pub model: Dlgan,
    pub stats: NormStats,
    pub feature_names: Vec<String>,
    pub rng: ChaCha8Rng,
    pub progress: Progress,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockInfo {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: TrainingConfig,
    stats: NormStats,
    feature_names: Vec<String>,
    rng: ChaCha8Rng,
    progress: Progress,
    blocks: Vec<BlockInfo>,
}

fn block_bytes(t: &Tensor) -> Vec<u8> {
    t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        let mut blocks = Vec::with_capacity(self.model.store.len());
        for entry in self.model.store.entries() {
            let bytes = block_bytes(&entry.value);
            blocks.push(BlockInfo {
                name: entry.name.clone(),
                shape: entry.value.shape().to_vec(),
                offset: payload.len() as u64,
                len: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(&bytes)),
            });
            payload.extend_from_slice(&bytes);
        }
        let manifest = Manifest {
            version: FORMAT_VERSION,
            config: self.config.clone(),
            stats: self.stats.clone(),
            feature_names: self.feature_names.clone(),
            rng: self.rng.clone(),
            progress: self.progress,
            blocks,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::CorruptFile("truncated header".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::CorruptFile("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let manifest_end = HEADER_LEN
            .checked_add(manifest_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::CorruptFile("truncated manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..manifest_end])
            .map_err(|e| Error::CorruptFile(format!("manifest: {e}")))?;
        if manifest.version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: manifest.version,
                expected: FORMAT_VERSION,
            });
        }
        let payload = &bytes[manifest_end..];
        let expected_len: u64 = manifest.blocks.iter().map(|b| b.len).sum();
        if payload.len() as u64 != expected_len {
            return Err(Error::CorruptFile(format!(
                "payload is {} bytes, manifest describes {expected_len}",
                payload.len()
            )));
        }
        let mut entries = Vec::with_capacity(manifest.blocks.len());
        for block in &manifest.blocks {
            let (start, len) = (block.offset as usize, block.len as usize);
            let numel: usize = block.shape.iter().product();
            if len != numel * 8 || start.checked_add(len).is_none_or(|e| e > payload.len()) {
                return Err(Error::CorruptFile(format!("block `{}` out of range", block.name)));
            }
            let raw = &payload[start..start + len];
            if hex::encode(Sha256::digest(raw)) != block.sha256 {
                return Err(Error::CorruptFile(format!("checksum mismatch in `{}`", block.name)));
            }
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push((block.name.clone(), Tensor::new(&block.shape, data)));
        }
        let features = manifest.stats.features();
        if manifest.feature_names.len() != features {
            return Err(Error::CorruptFile("feature names do not match normalizer".into()));
        }
        let dims = manifest
            .config
            .dims(features)
            .map_err(|e| Error::CorruptFile(format!("stored configuration: {e}")))?;
        // Initial values are overwritten by the stored blocks.
        let mut model = Dlgan::new(dims, &mut ChaCha8Rng::seed_from_u64(0));
        model.load_params(entries)?;
        Ok(Checkpoint {
            config: manifest.config,
            model,
            stats: manifest.stats,
            feature_names: manifest.feature_names,
            rng: manifest.rng,
            progress: manifest.progress,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?)
    }

    /// Fails unless all three training phases have completed.
    pub fn require_trained(&self) -> Result<()> {
        if self.progress.is_trained() {
            Ok(())
        } else {
            Err(Error::UntrainedCheckpoint)
        }
    }
}
