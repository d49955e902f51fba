//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "HYPNOCKP"
//! version    u32      1
//! dtype      u32      bytes per value (4 = f32, 8 = f64)
//! meta_len   u32
//! meta       JSON     architecture and training metadata
//! entries    u32
//! entry*     u16 name length, name (UTF-8), u8 rank, u32 per dimension,
//!            values in row-major order
//! sha256     32 bytes over everything above
//! ```
//!
//! Trainable parameters use their model names; batch-norm statistics are
//! stored as `<layer>.running_mean` and `<layer>.running_var`.

use hypno_core::model::{ArchitectureConfig, Model};
use hypno_core::nn::{Real, Tensor};
use hypno_core::train::{Seeds, TrainConfig, ValidationMetric};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HYPNOCKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub fold: Option<usize>,
    pub iteration: usize,
    pub validation_score: f64,
    pub metric: ValidationMetric,
    pub seeds: Seeds,
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture: ArchitectureConfig,
    pub training: Option<TrainingMetadata>,
}

fn put_entry<F: Real>(out: &mut Vec<u8>, name: &str, shape: &[usize], values: &[F]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for d in shape {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in values {
        v.write_le(out);
    }
}

/// Serializes parameters, running statistics and metadata.
pub fn save<F: Real>(model: &Model<F>, training: Option<TrainingMetadata>) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&CheckpointMeta {
        architecture: model.config().clone(),
        training,
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(F::BYTES as u32).to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    let bn: Vec<_> = model.batchnorm_states().collect();
    let entries = model.params().len() + 2 * bn.len();
    out.extend_from_slice(&(entries as u32).to_le_bytes());
    for p in model.params().iter() {
        put_entry(&mut out, &p.name, p.value.shape(), p.value.data());
    }
    for (name, state) in bn {
        let n = state.running_mean.len();
        put_entry(&mut out, &format!("{name}.running_mean"), &[n], &state.running_mean);
        put_entry(&mut out, &format!("{name}.running_var"), &[n], &state.running_var);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::CorruptCheckpoint("unexpected end of data".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// SHA-256 recorded in a checkpoint, as lowercase hex.
pub fn content_hash(bytes: &[u8]) -> Result<String> {
    if bytes.len() < 32 {
        return Err(Error::CorruptCheckpoint("too short".into()));
    }
    Ok(hex::encode(&bytes[bytes.len() - 32..]))
}

/// Parses and verifies a checkpoint; the value type must match `F`.
pub fn load<F: Real>(bytes: &[u8]) -> Result<(Model<F>, CheckpointMeta)> {
    if bytes.len() < 8 + 12 + 32 || &bytes[..8] != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::CorruptCheckpoint("content hash mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let dtype = r.u32()? as usize;
    if dtype != F::BYTES {
        return Err(Error::CorruptCheckpoint(format!(
            "stored values are {dtype}-byte, requested {}-byte",
            F::BYTES
        )));
    }
    let meta_len = r.u32()? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::CorruptCheckpoint(format!("metadata: {e}")))?;
    let mut model = Model::<F>::build(meta.architecture.clone(), &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| Error::CorruptCheckpoint(format!("architecture: {e}")))?;
    let expected = model.params().len() + 2 * model.batchnorm_states().count();
    let entries = r.u32()? as usize;
    if entries != expected {
        return Err(Error::CorruptCheckpoint(format!(
            "{entries} entries, architecture needs {expected}"
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..entries {
        let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::CorruptCheckpoint("entry name is not UTF-8".into()))?
            .to_owned();
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * dtype)?;
        let values: Vec<F> = raw.chunks_exact(dtype).map(F::read_le).collect();
        if !seen.insert(name.clone()) {
            return Err(Error::CorruptCheckpoint(format!("duplicate entry {name}")));
        }
        let mismatch = || Error::CorruptCheckpoint(format!("entry {name} does not fit the architecture"));
        if let Some(p) = model.params_mut().by_name_mut(&name) {
            if p.value.shape() != shape.as_slice() {
                return Err(mismatch());
            }
            p.value = Tensor::new(&shape, values)?;
        } else if let Some((layer, stat)) = name.rsplit_once('.') {
            let state = model.batchnorm_state_mut(layer).ok_or_else(mismatch)?;
            let slot = match stat {
                "running_mean" => &mut state.running_mean,
                "running_var" => &mut state.running_var,
                _ => return Err(mismatch()),
            };
            if slot.len() != n || rank != 1 {
                return Err(mismatch());
            }
            *slot = values;
        } else {
            return Err(mismatch());
        }
    }
    if r.pos != body.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    Ok((model, meta))
}
