//! safetensors checkpoints. Every parameter and running statistic is stored
//! as little-endian f32 under its registry name; the metadata map carries
//! the model config (`config`, JSON) plus caller-supplied entries.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;

use super::config::ModelConfig;
use super::model::Model;
use crate::error::{Result, SvrError};

const CONFIG_KEY: &str = "config";

fn ckpt_err(path: &Path, what: impl std::fmt::Display) -> SvrError {
    SvrError::Checkpoint(format!("{}: {what}", path.display()))
}

pub fn save_checkpoint(path: &Path, model: &Model<f32>, metadata: &[(String, String)]) -> Result<()> {
    let mut meta: HashMap<String, String> = metadata.iter().cloned().collect();
    meta.insert(CONFIG_KEY.into(), serde_json::to_string(model.config())?);
    let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = model
        .store
        .tensors()
        .map(|t| (t.name.clone(), t.data.iter().flat_map(|v| v.to_le_bytes()).collect(), t.shape.clone()))
        .collect();
    let views = bytes
        .iter()
        .map(|(n, b, s)| Ok((n.as_str(), TensorView::new(Dtype::F32, s.clone(), b).map_err(|e| ckpt_err(path, e))?)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| SvrError::io(format!("creating {}", dir.display()), e))?;
    }
    safetensors::serialize_to_file(views, Some(meta), path).map_err(|e| ckpt_err(path, e))
}

/// Rebuilds the model described by the stored config and fills in every
/// tensor; missing or mis-shaped tensors are errors.
pub fn load_checkpoint(path: &Path) -> Result<(Model<f32>, HashMap<String, String>)> {
    let bytes = std::fs::read(path).map_err(|e| SvrError::io(format!("reading {}", path.display()), e))?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| ckpt_err(path, e))?;
    let meta = header.metadata().clone().unwrap_or_default();
    let config: ModelConfig = serde_json::from_str(meta.get(CONFIG_KEY).ok_or_else(|| ckpt_err(path, "no model config"))?)
        .map_err(|e| ckpt_err(path, e))?;
    let tensors = SafeTensors::deserialize(&bytes).map_err(|e| ckpt_err(path, e))?;
    let mut model = Model::<f32>::new(&config, 0)?;
    let names: Vec<(String, Vec<usize>)> = model.store.tensors().map(|t| (t.name.clone(), t.shape.clone())).collect();
    for (name, shape) in names {
        let t = tensors.tensor(&name).map_err(|_| ckpt_err(path, format!("missing tensor {name}")))?;
        if t.dtype() != Dtype::F32 || t.shape() != shape.as_slice() {
            return Err(ckpt_err(path, format!("tensor {name} is {:?} {:?}, expected F32 {shape:?}", t.dtype(), t.shape())));
        }
        let data: Vec<f32> = t.data().chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        model.store.set_by_name(&name, &data);
    }
    if tensors.len() != model.store.tensors().count() {
        return Err(ckpt_err(path, "checkpoint holds tensors the model does not define"));
    }
    Ok((model, meta))
}
