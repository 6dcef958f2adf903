//! Model and optimizer checkpoints in safetensors format. Parameters are
//! stored as little-endian f64 tensors under their parameter names; the
//! model configuration travels in the header metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use ndarray::Array2;
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use super::optim::Adam;
use crate::error::{Error, Result};
use crate::model::{DiarizationModel, EncoderConfig};

pub const CHECKPOINT_FORMAT: &str = "eendrc-checkpoint-1";
const OPTIMIZER_FORMAT: &str = "eendrc-adam-1";

fn ckpt_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {msg}", path.display()))
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_tensors(path: &Path, tensors: &[(String, &Array2<f64>)], metadata: HashMap<String, String>) -> Result<()> {
    let bytes: Vec<(String, Vec<u8>, Vec<usize>)> = tensors
        .iter()
        .map(|(name, a)| {
            let data = a.iter().flat_map(|v| v.to_le_bytes()).collect();
            (name.clone(), data, vec![a.nrows(), a.ncols()])
        })
        .collect();
    let views = bytes
        .iter()
        .map(|(name, data, shape)| {
            TensorView::new(Dtype::F64, shape.clone(), data)
                .map(|v| (name.clone(), v))
                .map_err(|e| ckpt_err(path, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut buf = safetensors::serialize(views, Some(metadata)).map_err(|e| ckpt_err(path, e))?;
    sort_header(&mut buf);
    write_atomic(path, &buf)
}

/// Rewrites the JSON header with sorted keys so equal models give equal bytes.
fn sort_header(buf: &mut [u8]) {
    let n = u64::from_le_bytes(buf[..8].try_into().expect("8 bytes")) as usize;
    let header = &buf[8..8 + n];
    let Ok(value) = serde_json::from_slice::<serde_json::Value>(header) else {
        return;
    };
    let sorted = serde_json::to_vec(&value).expect("header serialises");
    if sorted.len() <= n {
        buf[8..8 + sorted.len()].copy_from_slice(&sorted);
        buf[8 + sorted.len()..8 + n].fill(b' ');
    }
}

type TensorMap = BTreeMap<String, Array2<f64>>;

fn read_tensors(path: &Path) -> Result<(TensorMap, HashMap<String, String>)> {
    let buf = std::fs::read(path).map_err(|e| ckpt_err(path, e))?;
    let (_, header) = SafeTensors::read_metadata(&buf).map_err(|e| ckpt_err(path, e))?;
    let metadata = header.metadata().clone().unwrap_or_default();
    let st = SafeTensors::deserialize(&buf).map_err(|e| ckpt_err(path, e))?;
    let mut out = BTreeMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F64 || view.shape().len() != 2 {
            return Err(ckpt_err(path, format!("tensor {name} is not a 2-d f64 tensor")));
        }
        let values: Vec<f64> = view
            .data()
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let shape = (view.shape()[0], view.shape()[1]);
        let arr = Array2::from_shape_vec(shape, values).map_err(|e| ckpt_err(path, e))?;
        out.insert(name, arr);
    }
    Ok((out, metadata))
}

/// Saves all parameters plus the model configuration.
pub fn save_checkpoint(model: &DiarizationModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tensors: Vec<(String, &Array2<f64>)> = model
        .params
        .ids()
        .map(|id| (model.params.name(id).to_string(), model.params.get(id)))
        .collect();
    let mut meta = HashMap::new();
    meta.insert("format".into(), CHECKPOINT_FORMAT.into());
    meta.insert(
        "config".into(),
        serde_json::to_string(&model.config).expect("config serialises"),
    );
    write_tensors(path, &tensors, meta)
}

fn assign_params(model: &mut DiarizationModel, tensors: &TensorMap, path: &Path) -> Result<()> {
    if tensors.len() != model.params.len() {
        return Err(ckpt_err(
            path,
            format!("{} tensors, model has {} parameters", tensors.len(), model.params.len()),
        ));
    }
    let ids: Vec<_> = model.params.ids().collect();
    for id in ids {
        let name = model.params.name(id).to_string();
        let value = tensors
            .get(&name)
            .ok_or_else(|| ckpt_err(path, format!("missing parameter {name}")))?;
        if value.dim() != model.params.get(id).dim() {
            return Err(ckpt_err(
                path,
                format!(
                    "{name} has shape {:?}, expected {:?}",
                    value.dim(),
                    model.params.get(id).dim()
                ),
            ));
        }
        model.params.get_mut(id).assign(value);
    }
    Ok(())
}

fn config_of(meta: &HashMap<String, String>, path: &Path) -> Result<EncoderConfig> {
    if meta.get("format").map(String::as_str) != Some(CHECKPOINT_FORMAT) {
        return Err(ckpt_err(path, "not a model checkpoint"));
    }
    let cfg = meta
        .get("config")
        .ok_or_else(|| ckpt_err(path, "missing config metadata"))?;
    serde_json::from_str(cfg).map_err(|e| ckpt_err(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DiarizationModel> {
    let path = path.as_ref();
    let (tensors, meta) = read_tensors(path)?;
    let config = config_of(&meta, path)?;
    let mut model = DiarizationModel::new(config, 0)?;
    assign_params(&mut model, &tensors, path)?;
    Ok(model)
}

/// Number of trailing checkpoints averaged for a run of `epochs` epochs.
pub fn averaging_window(epochs: usize, fraction: f64) -> usize {
    ((fraction * epochs as f64).ceil() as usize).clamp(1, epochs.max(1))
}

/// Parameter-wise mean of several checkpoints of the same architecture.
pub fn average_checkpoints<P: AsRef<Path>>(paths: &[P]) -> Result<DiarizationModel> {
    let first = paths
        .first()
        .ok_or_else(|| Error::Checkpoint("no checkpoints to average".into()))?;
    let mut model = load_checkpoint(first)?;
    let ids: Vec<_> = model.params.ids().collect();
    for p in &paths[1..] {
        let path = p.as_ref();
        let (tensors, meta) = read_tensors(path)?;
        if config_of(&meta, path)? != model.config {
            return Err(ckpt_err(path, "model configuration differs"));
        }
        for &id in &ids {
            let name = model.params.name(id).to_string();
            let value = tensors
                .get(&name)
                .ok_or_else(|| ckpt_err(path, format!("missing parameter {name}")))?;
            let target = model.params.get_mut(id);
            if value.dim() != target.dim() {
                return Err(ckpt_err(path, format!("{name} shape mismatch")));
            }
            *target += value;
        }
    }
    let n = paths.len() as f64;
    for id in ids {
        model.params.get_mut(id).mapv_inplace(|v| v / n);
    }
    Ok(model)
}

pub fn save_optimizer(opt: &Adam, model: &DiarizationModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut tensors = Vec::new();
    for (k, id) in model.params.ids().enumerate() {
        let name = model.params.name(id);
        tensors.push((format!("m.{name}"), &opt.first[k]));
        tensors.push((format!("v.{name}"), &opt.second[k]));
    }
    let mut meta = HashMap::new();
    meta.insert("format".into(), OPTIMIZER_FORMAT.into());
    meta.insert("step".into(), opt.step.to_string());
    meta.insert("beta1".into(), opt.beta1.to_string());
    meta.insert("beta2".into(), opt.beta2.to_string());
    meta.insert("eps".into(), opt.eps.to_string());
    write_tensors(path, &tensors, meta)
}

pub fn load_optimizer(model: &DiarizationModel, path: impl AsRef<Path>) -> Result<Adam> {
    let path = path.as_ref();
    let (mut tensors, meta) = read_tensors(path)?;
    if meta.get("format").map(String::as_str) != Some(OPTIMIZER_FORMAT) {
        return Err(ckpt_err(path, "not an optimizer state file"));
    }
    let num = |key: &str| -> Result<f64> {
        meta.get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| ckpt_err(path, format!("bad {key} metadata")))
    };
    let mut opt = Adam::new(&model.params, num("beta1")?, num("beta2")?, num("eps")?);
    opt.step = num("step")? as u64;
    for (k, id) in model.params.ids().enumerate() {
        let name = model.params.name(id);
        for (prefix, slot) in [("m", &mut opt.first[k]), ("v", &mut opt.second[k])] {
            let t = tensors
                .remove(&format!("{prefix}.{name}"))
                .ok_or_else(|| ckpt_err(path, format!("missing {prefix}.{name}")))?;
            if t.dim() != slot.dim() {
                return Err(ckpt_err(path, format!("{prefix}.{name} shape mismatch")));
            }
            *slot = t;
        }
    }
    Ok(opt)
}
