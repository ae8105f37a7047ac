//! Checkpoint JSON: `{format_version, config, train, data, weights}` with
//! every tensor stored as nested arrays in its logical shape.

use serde_json::{Map, Value};
use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelWeights};
use crate::error::{Error, Result};
use crate::pipeline::PrepConfig;
use crate::training::TrainConfig;

pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: ModelWeights,
    pub train: Option<TrainConfig>,
    pub data: Option<PrepConfig>,
}

fn nest(shape: &[usize], data: &[f64]) -> Value {
    match shape {
        [] | [_] => Value::Array(data.iter().map(|&v| Value::from(v)).collect()),
        [n, rest @ ..] => {
            let stride = data.len() / n;
            Value::Array(data.chunks(stride.max(1)).take(*n).map(|c| nest(rest, c)).collect())
        }
    }
}

fn flatten_into(value: &Value, shape: &[usize], name: &str, out: &mut Vec<f64>) -> Result<()> {
    let arr = value
        .as_array()
        .ok_or_else(|| Error::data(format!("tensor {name}: expected array")))?;
    let n = shape.first().copied().unwrap_or(0);
    if arr.len() != n {
        return Err(Error::data(format!("tensor {name}: expected length {n}, got {}", arr.len())));
    }
    if shape.len() == 1 {
        for v in arr {
            out.push(v.as_f64().ok_or_else(|| Error::data(format!("tensor {name}: non-numeric entry")))?);
        }
    } else {
        for v in arr {
            flatten_into(v, &shape[1..], name, out)?;
        }
    }
    Ok(())
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let mut tensors = Map::new();
        for t in self.weights.tensors() {
            tensors.insert(t.name, nest(&t.shape, t.data));
        }
        let mut doc = Map::new();
        doc.insert("format_version".into(), Value::from(CHECKPOINT_VERSION));
        doc.insert("config".into(), to_value(&self.weights.config)?);
        doc.insert("train".into(), to_value(&self.train)?);
        doc.insert("data".into(), to_value(&self.data)?);
        doc.insert("weights".into(), Value::Object(tensors));
        serde_json::to_string_pretty(&Value::Object(doc)).map_err(|e| Error::data(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Value = serde_json::from_str(text).map_err(|e| Error::data(format!("checkpoint: {e}")))?;
        let version = doc.get("format_version").and_then(Value::as_u64);
        if version != Some(CHECKPOINT_VERSION) {
            return Err(Error::data(format!(
                "unsupported checkpoint format_version {:?} (expected {CHECKPOINT_VERSION})",
                doc.get("format_version")
            )));
        }
        let config: ModelConfig = from_value(doc.get("config"), "config")?;
        let train: Option<TrainConfig> = from_value(doc.get("train"), "train")?;
        let data: Option<PrepConfig> = from_value(doc.get("data"), "data")?;
        let mut weights = ModelWeights::init(&config)?;
        let stored = doc
            .get("weights")
            .and_then(Value::as_object)
            .ok_or_else(|| Error::data("checkpoint has no weights"))?;
        let mut flat = Vec::with_capacity(weights.param_count());
        let names: Vec<(String, Vec<usize>)> = weights.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        for (name, shape) in &names {
            let value = stored.get(name).ok_or_else(|| Error::data(format!("missing tensor {name}")))?;
            flatten_into(value, shape, name, &mut flat)?;
        }
        if stored.len() != names.len() {
            return Err(Error::data("checkpoint has unexpected tensors"));
        }
        weights.assign_flat(&flat);
        if let Some(name) = weights.first_non_finite() {
            return Err(Error::data(format!("non-finite value in tensor {name}")));
        }
        Ok(Self { weights, train, data })
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::data(e.to_string()))
}

fn from_value<T: serde::de::DeserializeOwned>(v: Option<&Value>, what: &str) -> Result<T> {
    serde_json::from_value(v.cloned().unwrap_or(Value::Null)).map_err(|e| Error::data(format!("checkpoint {what}: {e}")))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}
