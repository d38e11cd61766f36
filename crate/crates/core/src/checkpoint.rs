//! Resumable checkpoints: a JSON header followed by a raw little-endian
//! 64-bit float block.
//!
//! ```text
//! b"TCLCKPT1" | u64 LE header length | header JSON | f64 LE block
//! ```
//!
//! The header carries the model config, normalization stats, stage cursor,
//! frozen factors, optimizer settings/step and a manifest of
//! `(name, offset, shape, kind)` describing the block. Parameters and both
//! optimizer moment buffers round-trip bit-exactly, so resumed training
//! reproduces an uninterrupted run step for step.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::array::Array;
use crate::autodiff::ParamStore;
use crate::backbone::BackboneConfig;
use crate::dataset::NormStats;
use crate::optim::{OptimizerSettings, OptimizerState};
use crate::Real;

const MAGIC: &[u8; 8] = b"TCLCKPT1";
pub const SCHEMA: &str = "checkpoint/v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic, not a checkpoint file")]
    BadMagic { path: String },
    #[error("{1}: corrupt header: {0}")]
    CorruptHeader(serde_json::Error, String),
    #[error("{path}: schema {found:?}, expected {expected:?}")]
    SchemaMismatch {
        path: String,
        found: String,
        expected: String,
    },
    #[error("manifest entry {name:?} ({offset}+{len}) exceeds block of {total} values")]
    ManifestOutOfBounds {
        name: String,
        offset: usize,
        len: usize,
        total: usize,
    },
    #[error("parameter {name:?}: checkpoint shape {found:?} does not match configured shape {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint config does not match: {0}")]
    ConfigMismatch(String),
    #[error("optimizer state misaligned: {0}")]
    MomentMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum BlockKind {
    Param,
    FirstMoment,
    SecondMoment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    kind: BlockKind,
    offset: usize,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    schema: String,
    backbone: BackboneConfig,
    /// Opaque echo of the training config that produced this checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_config: Option<serde_json::Value>,
    norm: NormStats,
    stage: usize,
    epochs_done_in_stage: usize,
    frozen_alphas: Vec<f64>,
    optimizer: OptimizerSettings,
    optimizer_step: u64,
    manifest: Vec<ManifestEntry>,
    total_values: usize,
}

/// In-memory image of a checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub backbone: BackboneConfig,
    pub train_config: Option<serde_json::Value>,
    pub norm: NormStats,
    pub stage: usize,
    pub epochs_done_in_stage: usize,
    pub frozen_alphas: Vec<f64>,
    pub optimizer: OptimizerSettings,
    pub store: ParamStore<Real>,
    pub opt_state: OptimizerState<Real>,
}

impl Checkpoint {
    /// Error if the stored model does not match `expected` (same shapes,
    /// same config).
    pub fn verify_backbone(&self, expected: &BackboneConfig) -> Result<(), CheckpointError> {
        if &self.backbone != expected {
            return Err(CheckpointError::ConfigMismatch(format!(
                "stored {:?}, expected {:?}",
                self.backbone, expected
            )));
        }
        let reference = crate::backbone::init_params(expected)
            .map_err(|e| CheckpointError::ConfigMismatch(e.to_string()))?;
        for (name, node) in reference.iter() {
            let found = self
                .store
                .get(name)
                .ok_or_else(|| CheckpointError::ConfigMismatch(format!("missing {name:?}")))?;
            if found.value().shape() != node.value().shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: name.clone(),
                    expected: node.value().shape().to_vec(),
                    found: found.value().shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
pub fn save(
    path: &Path,
    backbone: &BackboneConfig,
    norm: &NormStats,
    stage: usize,
    epochs_done_in_stage: usize,
    frozen_alphas: &[f64],
    optimizer: &OptimizerSettings,
    store: &ParamStore<Real>,
    opt_state: &OptimizerState<Real>,
    train_config: Option<serde_json::Value>,
) -> Result<(), CheckpointError> {
    let path_str = path.display().to_string();
    let wrap = |source| CheckpointError::Io {
        path: path_str.clone(),
        source,
    };

    let mut manifest = Vec::new();
    let mut block: Vec<f64> = Vec::new();
    for (name, node) in store.iter() {
        manifest.push(ManifestEntry {
            name: name.clone(),
            kind: BlockKind::Param,
            offset: block.len(),
            shape: node.value().shape().to_vec(),
        });
        block.extend_from_slice(node.value().data());
    }
    for (kind, buffers) in [
        (BlockKind::FirstMoment, &opt_state.first),
        (BlockKind::SecondMoment, &opt_state.second),
    ] {
        for ((name, node), buffer) in store.iter().zip(buffers) {
            manifest.push(ManifestEntry {
                name: name.clone(),
                kind,
                offset: block.len(),
                shape: node.value().shape().to_vec(),
            });
            block.extend_from_slice(buffer);
        }
    }

    let header = Header {
        schema: SCHEMA.to_string(),
        backbone: backbone.clone(),
        train_config,
        norm: norm.clone(),
        stage,
        epochs_done_in_stage,
        frozen_alphas: frozen_alphas.to_vec(),
        optimizer: optimizer.clone(),
        optimizer_step: opt_state.step,
        manifest,
        total_values: block.len(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| CheckpointError::CorruptHeader(e, path_str.clone()))?;

    let file = std::fs::File::create(path).map_err(wrap)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(MAGIC).map_err(wrap)?;
    w.write_all(&(header_json.len() as u64).to_le_bytes())
        .map_err(wrap)?;
    w.write_all(&header_json).map_err(wrap)?;
    for v in &block {
        w.write_all(&v.to_le_bytes()).map_err(wrap)?;
    }
    w.flush().map_err(wrap)
}

pub fn restore(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let path_str = path.display().to_string();
    let wrap = |source| CheckpointError::Io {
        path: path_str.clone(),
        source,
    };

    let mut file = std::fs::File::open(path).map_err(wrap)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic).map_err(wrap)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic { path: path_str });
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes).map_err(wrap)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json).map_err(wrap)?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| CheckpointError::CorruptHeader(e, path_str.clone()))?;
    if header.schema != SCHEMA {
        return Err(CheckpointError::SchemaMismatch {
            path: path_str,
            found: header.schema,
            expected: SCHEMA.to_string(),
        });
    }

    let mut raw = Vec::new();
    file.read_to_end(&mut raw).map_err(wrap)?;
    if raw.len() != header.total_values * 8 {
        return Err(CheckpointError::ManifestOutOfBounds {
            name: "<block>".into(),
            offset: 0,
            len: header.total_values,
            total: raw.len() / 8,
        });
    }
    let block: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let read_entry = |entry: &ManifestEntry| -> Result<Vec<f64>, CheckpointError> {
        let len: usize = entry.shape.iter().product();
        if entry.offset + len > block.len() {
            return Err(CheckpointError::ManifestOutOfBounds {
                name: entry.name.clone(),
                offset: entry.offset,
                len,
                total: block.len(),
            });
        }
        Ok(block[entry.offset..entry.offset + len].to_vec())
    };

    let mut store = ParamStore::new();
    for entry in header
        .manifest
        .iter()
        .filter(|e| e.kind == BlockKind::Param)
    {
        let data = read_entry(entry)?;
        store.insert(
            entry.name.clone(),
            Array::from_raw(entry.shape.clone(), data),
        );
    }

    let mut opt_state = OptimizerState::new(&store);
    opt_state.step = header.optimizer_step;
    for (kind, buffers) in [
        (BlockKind::FirstMoment, &mut opt_state.first),
        (BlockKind::SecondMoment, &mut opt_state.second),
    ] {
        let entries: Vec<&ManifestEntry> =
            header.manifest.iter().filter(|e| e.kind == kind).collect();
        if entries.len() != store.len() {
            return Err(CheckpointError::MomentMismatch(format!(
                "{} moment entries for {} parameters",
                entries.len(),
                store.len()
            )));
        }
        for (buffer, entry) in buffers.iter_mut().zip(entries) {
            let data = read_entry(entry)?;
            if data.len() != buffer.len() {
                return Err(CheckpointError::MomentMismatch(format!(
                    "moment {:?} has {} values, parameter has {}",
                    entry.name,
                    data.len(),
                    buffer.len()
                )));
            }
            *buffer = data;
        }
    }

    Ok(Checkpoint {
        backbone: header.backbone,
        train_config: header.train_config,
        norm: header.norm,
        stage: header.stage,
        epochs_done_in_stage: header.epochs_done_in_stage,
        frozen_alphas: header.frozen_alphas,
        optimizer: header.optimizer,
        store,
        opt_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::init_params;

    fn tiny_config() -> BackboneConfig {
        BackboneConfig {
            joints: 2,
            dims: 2,
            t_h: 3,
            t_p: 4,
            hidden_dims: vec![6],
            alpha_head_hidden: 3,
            detach_alpha_head: false,
            init_seed: 5,
        }
    }

    fn norm(cols: usize) -> NormStats {
        NormStats {
            mean: vec![0.25; cols],
            std: vec![1.5; cols],
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let config = tiny_config();
        let store = init_params(&config).unwrap();
        let mut opt_state = OptimizerState::new(&store);
        opt_state.step = 17;
        opt_state.first[0][0] = 0.125;
        opt_state.second[1][2] = -3.5;
        let stats = norm(config.coord_cols());
        save(
            &path,
            &config,
            &stats,
            2,
            7,
            &[0.3125],
            &OptimizerSettings::default(),
            &store,
            &opt_state,
            None,
        )
        .unwrap();

        let ckpt = restore(&path).unwrap();
        assert_eq!(ckpt.backbone, config);
        assert_eq!(ckpt.norm, stats);
        assert_eq!(ckpt.stage, 2);
        assert_eq!(ckpt.epochs_done_in_stage, 7);
        assert_eq!(ckpt.frozen_alphas, [0.3125]);
        assert_eq!(ckpt.opt_state, opt_state);
        assert_eq!(ckpt.store.flat_values(), store.flat_values());
        let names: Vec<_> = ckpt.store.names().cloned().collect();
        let expected: Vec<_> = store.names().cloned().collect();
        assert_eq!(names, expected);
    }

    #[test]
    fn wrong_config_is_a_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let config = tiny_config();
        let store = init_params(&config).unwrap();
        let opt_state = OptimizerState::new(&store);
        save(
            &path,
            &config,
            &norm(config.coord_cols()),
            1,
            0,
            &[],
            &OptimizerSettings::default(),
            &store,
            &opt_state,
            None,
        )
        .unwrap();
        let ckpt = restore(&path).unwrap();
        let other = BackboneConfig {
            hidden_dims: vec![9],
            ..tiny_config()
        };
        assert!(ckpt.verify_backbone(&other).is_err());
        assert!(ckpt.verify_backbone(&tiny_config()).is_ok());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(
            restore(&path),
            Err(CheckpointError::BadMagic { .. })
        ));

        // Truncated block.
        let config = tiny_config();
        let store = init_params(&config).unwrap();
        let opt_state = OptimizerState::new(&store);
        let good = dir.path().join("good.ckpt");
        save(
            &good,
            &config,
            &norm(config.coord_cols()),
            1,
            0,
            &[],
            &OptimizerSettings::default(),
            &store,
            &opt_state,
            None,
        )
        .unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let truncated = dir.path().join("trunc.ckpt");
        std::fs::write(&truncated, &bytes[..bytes.len() - 16]).unwrap();
        assert!(restore(&truncated).is_err());
    }
}
