//! Chunked binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "BSRNCKPT"
//! version    u32      (currently 1)
//! config     u64 length + JSON: { "model": ModelConfig, "meta": {...} }
//! tensors    u32 count, then per tensor:
//!              u32 name length, name (UTF-8),
//!              u32 rank, u64 dims...,
//!              f32 values, row-major
//! checksum   u32      CRC32 of every byte above
//! ```
//!
//! `meta` is free-form; the trainer stores its iteration counter, phase,
//! optimizer step and best-validation bookkeeping there. Optimizer moment
//! tensors ride along under `optim.m.` / `optim.v.` name prefixes and
//! discriminator parameters under `disc.`; the model loader ignores both.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::{sc, Scalar};

const MAGIC: &[u8; 8] = b"BSRNCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConfigChunk {
    model: ModelConfig,
    #[serde(default)]
    meta: serde_json::Value,
}

/// In-memory checkpoint: config, free-form metadata and named f32 tensors.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn from_model<F: Scalar>(model: &Model<F>, meta: serde_json::Value) -> Self {
        let tensors = model
            .store
            .iter()
            .map(|(_, t)| {
                (
                    t.name.clone(),
                    t.shape.clone(),
                    t.data.iter().map(|v| v.to_f64().unwrap_or(0.0) as f32).collect(),
                )
            })
            .collect();
        Checkpoint {
            config: model.config.clone(),
            meta,
            tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, shape, data)| (shape.as_slice(), data.as_slice()))
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        self.tensors.push((name.into(), shape, data));
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());

        let chunk = ConfigChunk {
            model: self.config.clone(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&chunk)?;
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);

        buf.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, shape, data) in &self.tensors {
            let name_bytes = name.as_bytes();
            buf.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
            buf.extend_from_slice(name_bytes);
            buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            let numel: usize = shape.iter().product();
            if numel != data.len() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: {numel} values expected, {} present",
                    data.len()
                )));
            }
            for &v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }

        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        std::fs::write(path, &buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < MAGIC.len() + 8 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        if crc32fast::hash(body) != stored_crc {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }

        let mut cur = Cursor { buf: body, pos: 0 };
        if cur.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let json_len = cur.u64()? as usize;
        let chunk: ConfigChunk = serde_json::from_slice(cur.take(json_len)?)?;

        let count = cur.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|e| Error::Checkpoint(format!("tensor name not UTF-8: {e}")))?;
            let rank = cur.u32()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let raw = cur.take(numel * 4)?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((name, shape, data));
        }
        Ok(Checkpoint {
            config: chunk.model,
            meta: chunk.meta,
            tensors,
        })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Rebuilds a model from a checkpoint. Every model parameter must be present
/// with the right shape; extra tensors (optimizer moments, discriminators)
/// are ignored.
pub fn model_from_checkpoint<F: Scalar>(ckpt: &Checkpoint) -> Result<Model<F>> {
    let mut model = Model::<F>::init(ckpt.config.clone(), 0)?;
    let ids: Vec<_> = model.store.iter().map(|(id, t)| (id, t.name.clone())).collect();
    for (id, name) in ids {
        let (shape, data) = ckpt.tensor(&name).ok_or_else(|| {
            Error::Checkpoint(format!("checkpoint is missing parameter {name}"))
        })?;
        let t = model.store.get_mut(id);
        if shape != t.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: checkpoint shape {shape:?} vs model {:?}",
                t.shape
            )));
        }
        t.data = data.iter().map(|&v| sc::<F>(v as f64)).collect();
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftConfig;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            sample_rate: 16_000,
            n_feat: 4,
            num_blocks: 1,
            lstm_hidden: 8,
            mlp_hidden: 8,
            causal: true,
            personalized: false,
            embed_dim: 4,
            stft: StftConfig::wide_band_16k(),
            band_edges: Some(vec![0, 64, 128, 257]),
            split_band: Some(2),
        }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let model = Model::<f32>::init(tiny_config(), 9).unwrap();
        let meta = serde_json::json!({"iter": 42, "phase": "pretrain_mr"});
        let mut ckpt = Checkpoint::from_model(&model, meta.clone());
        ckpt.push_tensor("optim.m.extra", vec![2], vec![0.5, -0.5]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.meta, meta);
        assert_eq!(back.tensors.len(), ckpt.tensors.len());
        for ((n1, s1, d1), (n2, s2, d2)) in ckpt.tensors.iter().zip(&back.tensors) {
            assert_eq!(n1, n2);
            assert_eq!(s1, s2);
            assert_eq!(d1, d2);
        }

        let rebuilt = model_from_checkpoint::<f32>(&back).unwrap();
        for ((_, a), (_, b)) in model.store.iter().zip(rebuilt.store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.data, b.data, "{}", a.name);
        }
    }

    #[test]
    fn corrupted_file_fails_checksum() {
        let model = Model::<f32>::init(tiny_config(), 9).unwrap();
        let ckpt = Checkpoint::from_model(&model, serde_json::Value::Null);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ckpt.save(&path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        match Checkpoint::load(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("checksum")),
            other => panic!("expected checksum failure, got {other:?}"),
        }
    }

    #[test]
    fn missing_parameter_is_checkpoint_error() {
        let model = Model::<f32>::init(tiny_config(), 9).unwrap();
        let mut ckpt = Checkpoint::from_model(&model, serde_json::Value::Null);
        ckpt.tensors.retain(|(n, _, _)| n != "mask.0.fc1.w");
        assert!(matches!(
            model_from_checkpoint::<f32>(&ckpt),
            Err(Error::Checkpoint(_))
        ));
    }
}
