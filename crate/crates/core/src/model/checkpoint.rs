//! Checkpoints are a pair of files sharing a stem: `<stem>.json` holds the
//! model config and the name, shape and offset of every parameter;
//! `<stem>.bin` holds the values as little-endian `f64`, concatenated in
//! manifest order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::forecaster::ForecastModel;
use super::params::ParamStore;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::{write_bytes_atomic, write_string_atomic};

pub const CHECKPOINT_FORMAT: &str = "vpf-checkpoint-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in values.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: ModelConfig,
    pub params: Vec<ParamEntry>,
}

/// `<stem>.json` and `<stem>.bin`; a stem already ending in `.json` is accepted.
pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let base = if stem.extension().is_some_and(|e| e == "json" || e == "bin") {
        stem.with_extension("")
    } else {
        stem.to_path_buf()
    };
    let with = |ext: &str| {
        let mut s = base.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".json"), with(".bin"))
}

pub fn save_checkpoint(model: &ForecastModel, stem: &Path) -> Result<()> {
    let (json_path, bin_path) = checkpoint_paths(stem);
    let store = model.params();
    let mut params = Vec::with_capacity(store.len());
    let mut blob = Vec::with_capacity(store.scalar_count() * 8);
    let mut offset = 0;
    for (name, t) in store.names().iter().zip(store.tensors()) {
        params.push(ParamEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        config: model.config().clone(),
        params,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_bytes_atomic(&bin_path, &blob)?;
    write_string_atomic(&json_path, &(json + "\n"))
}

pub fn read_manifest(stem: &Path) -> Result<CheckpointManifest> {
    let (json_path, _) = checkpoint_paths(stem);
    let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::json(json_path.display().to_string(), e))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Invalid(format!(
            "{}: unknown checkpoint format {}",
            json_path.display(),
            manifest.format
        )));
    }
    Ok(manifest)
}

pub fn load_checkpoint(stem: &Path) -> Result<ForecastModel> {
    let manifest = read_manifest(stem)?;
    let (_, bin_path) = checkpoint_paths(stem);
    let bytes = std::fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Invalid(format!("{}: truncated blob", bin_path.display())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut loaded = ParamStore::new();
    for entry in &manifest.params {
        let n: usize = entry.shape.iter().product();
        let data = values
            .get(entry.offset..entry.offset + n)
            .ok_or_else(|| Error::Invalid(format!("{}: blob too short for {}", bin_path.display(), entry.name)))?;
        loaded.add(entry.name.clone(), Tensor::new(entry.shape.clone(), data.to_vec())?)?;
    }
    let mut model = ForecastModel::new(manifest.config, 0)?;
    model.params_mut().load_from(&loaded)?;
    if let Some(name) = model.params().first_non_finite() {
        return Err(Error::NonFinite(format!("checkpoint parameter {name}")));
    }
    Ok(model)
}
