//! Trainer checkpoints: the quantized model plus shadow parameters and
//! optimizer state, enough to resume training exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, ShadowLayer, TrainerCheckpoint};
use crate::error::{Error, Result};
use crate::model::{ModelRepr, MODEL_FORMAT_VERSION};

#[derive(Serialize, Deserialize)]
struct CheckpointRepr {
    version: i64,
    model: ModelRepr,
    shadow: Vec<ShadowLayer>,
    adam: AdamState,
}

pub fn checkpoint_to_bytes(ckpt: &TrainerCheckpoint) -> Result<Vec<u8>> {
    let model = ckpt.model();
    model.validate()?;
    if !ckpt.is_consistent() {
        return Err(Error::invariant("parameters are not the quantized shadows"));
    }
    let repr = CheckpointRepr {
        version: MODEL_FORMAT_VERSION,
        model: ModelRepr::from_model(&model),
        shadow: ckpt.shadow.clone(),
        adam: ckpt.adam.clone(),
    };
    let mut bytes = serde_json::to_vec(&repr).map_err(|e| Error::Parse(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<TrainerCheckpoint> {
    let repr: CheckpointRepr =
        serde_json::from_slice(bytes).map_err(|e| Error::Parse(e.to_string()))?;
    if repr.version != MODEL_FORMAT_VERSION {
        return Err(Error::SchemaVersion {
            found: repr.version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let model = repr.model.into_model()?;
    let shapes_match = |layers: &[ShadowLayer]| {
        layers.len() == model.spec.layers.len()
            && layers
                .iter()
                .zip(&model.spec.layers)
                .all(|(s, l)| s.weights.len() == l.weight_count() && s.theta.len() == l.out_size())
    };
    if !shapes_match(&repr.shadow) || !shapes_match(&repr.adam.m) || !shapes_match(&repr.adam.v) {
        return Err(Error::shape(
            "checkpoint state does not match the architecture",
        ));
    }
    let ckpt = TrainerCheckpoint {
        spec: model.spec,
        shadow: repr.shadow,
        adam: repr.adam,
        params: model.params,
    };
    if !ckpt.is_consistent() {
        return Err(Error::invariant("parameters are not the quantized shadows"));
    }
    Ok(ckpt)
}

pub fn save_checkpoint(ckpt: &TrainerCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint_to_bytes(ckpt)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainerCheckpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
