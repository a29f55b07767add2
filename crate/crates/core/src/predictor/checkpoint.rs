//! `TRNN0001` model checkpoints.
//!
//! `magic | u64 LE header length | JSON header | tensors`, where the tensors
//! are little-endian `f64` values written in the order of
//! [`TENSOR_NAMES`], each flattened row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::PredictorConfig;
use super::params::{Params, TENSOR_NAMES};
use super::PredictorModel;
use crate::dataset::{check_payload, read_container, write_container};
use crate::error::{CoreError, Result};
use crate::CHECKPOINT_FORMAT;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub config: PredictorConfig,
    pub init_seed: u64,
    pub epochs_trained: usize,
    pub dtype: String,
    pub tensors: Vec<TensorInfo>,
    pub payload_bytes: usize,
}

pub fn encode_checkpoint(model: &PredictorModel) -> Result<Vec<u8>> {
    let shapes = Params::shapes(&model.config);
    let mut payload = Vec::with_capacity(model.params.len() * 8);
    for (t, shape) in model.params.tensors().iter().zip(&shapes) {
        if t.len() != shape.iter().product::<usize>() {
            return Err(CoreError::Shape {
                expected: format!("{shape:?}"),
                found: format!("{} values", t.len()),
            });
        }
        for v in t.iter() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        config: model.config,
        init_seed: model.config.init_seed,
        epochs_trained: model.epochs_trained,
        dtype: "f64-le".into(),
        tensors: TENSOR_NAMES
            .iter()
            .zip(shapes)
            .map(|(name, shape)| TensorInfo {
                name: name.to_string(),
                shape,
            })
            .collect(),
        payload_bytes: payload.len(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| CoreError::Header(e.to_string()))?;
    Ok(write_container(CHECKPOINT_FORMAT, &header, &payload))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<PredictorModel> {
    let (header, payload) = read_container(CHECKPOINT_FORMAT, bytes)?;
    let header: CheckpointHeader =
        serde_json::from_slice(header).map_err(|e| CoreError::Header(e.to_string()))?;
    header.config.validate()?;
    let shapes = Params::shapes(&header.config);
    let names_match = header.tensors.len() == shapes.len()
        && header
            .tensors
            .iter()
            .zip(TENSOR_NAMES.iter().zip(&shapes))
            .all(|(info, (name, shape))| info.name == *name && &info.shape == shape);
    if !names_match {
        return Err(CoreError::Header("tensor table does not match the configuration".into()));
    }
    let implied = shapes.iter().map(|s| s.iter().product::<usize>()).sum::<usize>() * 8;
    check_payload(header.payload_bytes, implied, payload.len())?;

    let mut params = Params::zeros(&header.config);
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok(PredictorModel {
        config: header.config,
        params,
        epochs_trained: header.epochs_trained,
    })
}

pub fn save_checkpoint(model: &PredictorModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<PredictorModel> {
    decode_checkpoint(&fs::read(path)?)
}
