//! Self-describing model checkpoints.
//!
//! Layout: the magic bytes `DMOECKPT`, a little-endian `u32` header length,
//! a JSON header, then every parameter value as little-endian `f64` in
//! registration order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::{FUSED_FEATURE, GRID_LEN, IMAGE_FEATURE, MEASUREMENT_FEATURE};
use crate::error::{Error, Result};
use crate::experts::{BOTTLENECK, EXPERT_COUNT, FEATURE_DIM, GRU_HIDDEN};
use crate::model::{Model, Variant};
use crate::numerics::ParamSet;
use crate::router::SCENE_EXPERTS;
use crate::sim::WAYPOINTS;
use crate::trainer::{dataset::sha256_hex, TrainConfig};

pub const MAGIC: &[u8; 8] = b"DMOECKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub grid: usize,
    pub image_feature: usize,
    pub measurement_feature: usize,
    pub fused: usize,
    pub bottleneck: usize,
    pub gru_hidden: usize,
    pub teacher_feature: usize,
    pub waypoints: usize,
    pub scene_experts: usize,
}

impl Dims {
    pub fn current() -> Self {
        Self {
            grid: GRID_LEN,
            image_feature: IMAGE_FEATURE,
            measurement_feature: MEASUREMENT_FEATURE,
            fused: FUSED_FEATURE,
            bottleneck: BOTTLENECK,
            gru_hidden: GRU_HIDDEN,
            teacher_feature: FEATURE_DIM,
            waypoints: WAYPOINTS,
            scene_experts: SCENE_EXPERTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub dims: Dims,
    pub expert_count: usize,
    pub variant: Variant,
    pub tau: f64,
    pub config: TrainConfig,
    pub dataset_manifest_hash: String,
    pub param_count: usize,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Model,
    pub params: ParamSet,
}

fn tensors(ps: &ParamSet) -> Vec<TensorInfo> {
    ps.entries()
        .iter()
        .map(|e| TensorInfo {
            name: e.name.clone(),
            rows: e.rows,
            cols: e.cols,
        })
        .collect()
}

impl Checkpoint {
    pub fn new(model: Model, params: ParamSet, config: TrainConfig, dataset_manifest_hash: String) -> Self {
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            dims: Dims::current(),
            expert_count: EXPERT_COUNT,
            variant: config.variant,
            tau: config.tau,
            dataset_manifest_hash,
            param_count: params.len(),
            tensors: tensors(&params),
            config,
        };
        Self { header, model, params }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serialises");
        let mut out = Vec::with_capacity(12 + header.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.params.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic bytes".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(body).map_err(|e| bad(e.to_string()))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {}", header.version)));
        }
        if header.dims != Dims::current() || header.expert_count != EXPERT_COUNT {
            return Err(bad("network dimensions differ from this build".into()));
        }
        let (model, mut params) = Model::init(header.config.seed);
        if tensors(&params) != header.tensors || params.len() != header.param_count {
            return Err(bad("tensor layout differs from this build".into()));
        }
        let payload = &bytes[12 + hlen..];
        if payload.len() != 8 * header.param_count {
            return Err(bad(format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                8 * header.param_count
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite parameter".into()));
        }
        params.load_values(values)?;
        Ok(Self { header, model, params })
    }

    /// Writes the checkpoint and returns its SHA-256.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }

    /// Loads a checkpoint and returns it with its SHA-256.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok((Self::from_bytes(&bytes, path)?, sha256_hex(&bytes)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> Checkpoint {
        let (m, ps) = Model::init(11);
        Checkpoint::new(m, ps, TrainConfig::default(), "abc".into())
    }

    #[test]
    fn round_trip_is_exact() {
        let c = ckpt();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back.params.values(), c.params.values());
        assert_eq!(back.header, c.header);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corruption_is_rejected() {
        let bytes = ckpt().to_bytes();
        let p = Path::new("x");
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8], p).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT\0\0\0\0", p).is_err());
        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(Checkpoint::from_bytes(&nan, p).is_err());
    }
}
