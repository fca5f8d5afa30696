//! Portable model file.
//!
//! UTF-8 JSON with a schema `version`, and one entry per layer carrying its
//! kind, shapes, activation, flat row-major `weights` (target-major) and
//! `theta`. Files are written compactly on a single line followed by a
//! newline, so identical models serialize to identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    to_param, ActivationKind, LayerKind, LayerParams, LayerSpec, Model, NetworkSpec,
    QuantizedParams,
};

pub const MODEL_FORMAT_VERSION: i64 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub(crate) enum ActivationRepr {
    Binary {},
    Drelu { lambda: i64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct LayerRepr {
    pub kind: String,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    pub activation: ActivationRepr,
    pub weights: Vec<i64>,
    pub theta: Vec<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ModelRepr {
    pub version: i64,
    pub layers: Vec<LayerRepr>,
}

impl ModelRepr {
    pub(crate) fn from_model(model: &Model) -> Self {
        let layers = model
            .spec
            .layers
            .iter()
            .zip(&model.params.layers)
            .map(|(l, p)| {
                let (kind, kernel_size, channels) = match l.kind {
                    LayerKind::Dense => ("dense", None, None),
                    LayerKind::Conv2d { kernel, channels } => {
                        ("conv2d", Some(kernel), Some(channels))
                    }
                };
                LayerRepr {
                    kind: kind.to_string(),
                    in_shape: l.in_shape.clone(),
                    out_shape: l.out_shape.clone(),
                    kernel_size,
                    channels,
                    activation: match l.activation {
                        ActivationKind::Binary => ActivationRepr::Binary {},
                        ActivationKind::DiscretizedRelu { lambda } => ActivationRepr::Drelu {
                            lambda: lambda as i64,
                        },
                    },
                    weights: p.weights.iter().map(|&w| w as i64).collect(),
                    theta: p.theta.iter().map(|&t| t as i64).collect(),
                }
            })
            .collect();
        ModelRepr {
            version: MODEL_FORMAT_VERSION,
            layers,
        }
    }

    pub(crate) fn into_model(self) -> Result<Model> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(Error::SchemaVersion {
                found: self.version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut params = Vec::with_capacity(self.layers.len());
        for (k, l) in self.layers.into_iter().enumerate() {
            let activation = match l.activation {
                ActivationRepr::Binary {} => ActivationKind::Binary,
                ActivationRepr::Drelu { lambda } if lambda >= 1 && lambda <= u32::MAX as i64 => {
                    ActivationKind::DiscretizedRelu {
                        lambda: lambda as u32,
                    }
                }
                ActivationRepr::Drelu { lambda } => {
                    return Err(Error::invariant(format!(
                        "layer {k}: lambda {lambda} must be >= 1"
                    )))
                }
            };
            let kind = match l.kind.as_str() {
                "dense" => LayerKind::Dense,
                "conv2d" => match (l.kernel_size, l.channels) {
                    (Some(kernel), Some(channels)) => LayerKind::Conv2d { kernel, channels },
                    _ => {
                        return Err(Error::Parse(format!(
                            "layer {k}: conv2d needs kernel_size and channels"
                        )))
                    }
                },
                other => return Err(Error::Parse(format!("layer {k}: unknown kind {other:?}"))),
            };
            let weights = l
                .weights
                .iter()
                .map(|&w| to_param(w, &format!("layer {k} weight")))
                .collect::<Result<Vec<_>>>()?;
            let theta = l
                .theta
                .iter()
                .map(|&t| {
                    if t < 0 {
                        Err(Error::invariant(format!(
                            "layer {k}: negative threshold {t}"
                        )))
                    } else {
                        to_param(t, &format!("layer {k} threshold"))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            layers.push(LayerSpec {
                kind,
                in_shape: l.in_shape,
                out_shape: l.out_shape,
                activation,
            });
            params.push(LayerParams { weights, theta });
        }
        let spec = NetworkSpec { layers };
        Model::new(spec, QuantizedParams { layers: params })
    }
}

/// Serializes a model to its canonical byte representation.
pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    model.validate()?;
    let mut bytes = serde_json::to_vec(&ModelRepr::from_model(model))
        .map_err(|e| Error::Parse(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let repr: ModelRepr = serde_json::from_slice(bytes).map_err(|e| Error::Parse(e.to_string()))?;
    repr.into_model()
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Model {
        Model::new(
            NetworkSpec::new(vec![
                LayerSpec::dense(3, 2, ActivationKind::Binary),
                LayerSpec::dense(2, 2, ActivationKind::drelu(4)),
            ])
            .unwrap(),
            QuantizedParams {
                layers: vec![
                    LayerParams {
                        weights: vec![1, -2, 3, -128, 127, 0],
                        theta: vec![0, 5],
                    },
                    LayerParams {
                        weights: vec![7, -7, 2, 2],
                        theta: vec![1, 0],
                    },
                ],
            },
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let m = tiny();
        let bytes = to_bytes(&m).unwrap();
        assert_eq!(from_bytes(&bytes).unwrap(), m);
        assert_eq!(to_bytes(&from_bytes(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn activation_encoding() {
        let text = String::from_utf8(to_bytes(&tiny()).unwrap()).unwrap();
        assert!(text.contains(r#""activation":{"binary":{}}"#));
        assert!(text.contains(r#""activation":{"drelu":{"lambda":4}}"#));
        assert!(text.starts_with(r#"{"version":1,"layers":["#));
    }

    #[test]
    fn zero_thresholds_load() {
        let mut m = tiny();
        for l in &mut m.params.layers {
            l.theta.iter_mut().for_each(|t| *t = 0);
        }
        let back = from_bytes(&to_bytes(&m).unwrap()).unwrap();
        assert!(back
            .params
            .layers
            .iter()
            .all(|l| l.theta.iter().all(|&t| t == 0)));
    }

    #[test]
    fn out_of_range_weight_rejected() {
        let text = String::from_utf8(to_bytes(&tiny()).unwrap()).unwrap();
        let bad = text.replacen("\"weights\":[1,", "\"weights\":[200,", 1);
        assert!(matches!(
            from_bytes(bad.as_bytes()),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn negative_threshold_rejected() {
        let text = String::from_utf8(to_bytes(&tiny()).unwrap()).unwrap();
        let bad = text.replacen("\"theta\":[0,5]", "\"theta\":[-1,5]", 1);
        assert!(matches!(
            from_bytes(bad.as_bytes()),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn zero_lambda_rejected() {
        let text = String::from_utf8(to_bytes(&tiny()).unwrap()).unwrap();
        let bad = text.replace("\"lambda\":4", "\"lambda\":0");
        assert!(matches!(
            from_bytes(bad.as_bytes()),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn truncated_file_is_parse_error() {
        let bytes = to_bytes(&tiny()).unwrap();
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(from_bytes(cut), Err(Error::Parse(_))));
    }

    #[test]
    fn version_mismatch() {
        let text = String::from_utf8(to_bytes(&tiny()).unwrap()).unwrap();
        let bad = text.replace("\"version\":1", "\"version\":2");
        assert!(matches!(
            from_bytes(bad.as_bytes()),
            Err(Error::SchemaVersion { found: 2, .. })
        ));
    }

    #[test]
    fn save_rejects_invalid_params() {
        let mut m = tiny();
        m.params.layers[0].theta[0] = -3;
        let dir = tempfile::tempdir().unwrap();
        assert!(save_model(&m, dir.path().join("m.json")).is_err());
    }
}
