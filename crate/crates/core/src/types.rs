//! Network topology and integer parameter types shared by every module.

use crate::error::{Error, Result};

/// Lower and upper bound of every forward-pass parameter.
pub const PARAM_MIN: i32 = -128;
pub const PARAM_MAX: i32 = 127;

/// Activation of a neuron layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    /// Hard step: 1 iff the net input exceeds the threshold.
    Binary,
    /// Staircase ReLU with integer step `lambda >= 1`.
    DiscretizedRelu { lambda: u32 },
}

impl ActivationKind {
    pub fn drelu(lambda: u32) -> Self {
        ActivationKind::DiscretizedRelu { lambda }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationKind::DiscretizedRelu { lambda: 0 } => Err(Error::invariant(
                "discretized ReLU step lambda must be >= 1",
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense,
    /// Valid (unpadded), stride-1 convolution with `channels` output maps of
    /// `kernel` x `kernel` filters.
    Conv2d {
        kernel: usize,
        channels: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub activation: ActivationKind,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl LayerSpec {
    pub fn dense(inputs: usize, outputs: usize, activation: ActivationKind) -> Self {
        LayerSpec {
            kind: LayerKind::Dense,
            in_shape: vec![inputs],
            out_shape: vec![outputs],
            activation,
        }
    }

    /// Convolution over a `[channels, height, width]` input.
    pub fn conv2d(
        in_shape: [usize; 3],
        channels: usize,
        kernel: usize,
        activation: ActivationKind,
    ) -> Result<Self> {
        let [_, h, w] = in_shape;
        if kernel == 0 || kernel > h || kernel > w {
            return Err(Error::shape(format!(
                "kernel {kernel} does not fit input {h}x{w}"
            )));
        }
        Ok(LayerSpec {
            kind: LayerKind::Conv2d { kernel, channels },
            in_shape: in_shape.to_vec(),
            out_shape: vec![channels, h - kernel + 1, w - kernel + 1],
            activation,
        })
    }

    pub fn in_size(&self) -> usize {
        numel(&self.in_shape)
    }

    pub fn out_size(&self) -> usize {
        numel(&self.out_shape)
    }

    /// Input fan-in of a single output unit.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.in_size(),
            LayerKind::Conv2d { kernel, .. } => self.in_shape[0] * kernel * kernel,
        }
    }

    /// Number of stored weights: `out x in` for dense layers,
    /// `out_ch x in_ch x k x k` for convolutions.
    pub fn weight_count(&self) -> usize {
        match self.kind {
            LayerKind::Dense => self.out_size() * self.in_size(),
            LayerKind::Conv2d { kernel, channels } => channels * self.in_shape[0] * kernel * kernel,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.activation.validate()?;
        if self.in_size() == 0 || self.out_size() == 0 {
            return Err(Error::shape("layer with an empty input or output"));
        }
        match self.kind {
            LayerKind::Dense => Ok(()),
            LayerKind::Conv2d { kernel, channels } => {
                if self.in_shape.len() != 3 || self.out_shape.len() != 3 {
                    return Err(Error::shape(
                        "conv2d shapes must be [channels, height, width]",
                    ));
                }
                let expected = LayerSpec::conv2d(
                    [self.in_shape[0], self.in_shape[1], self.in_shape[2]],
                    channels,
                    kernel,
                    self.activation,
                )?;
                if expected.out_shape != self.out_shape {
                    return Err(Error::shape(format!(
                        "conv2d out_shape {:?} should be {:?}",
                        self.out_shape, expected.out_shape
                    )));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = NetworkSpec { layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].in_size()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().map(LayerSpec::out_size).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invariant("network needs at least one layer"));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_size() != pair[1].in_size() {
                return Err(Error::shape(format!(
                    "layer {k} emits {:?} but layer {} expects {:?}",
                    pair[0].out_shape,
                    k + 1,
                    pair[1].in_shape
                )));
            }
            if matches!(pair[1].kind, LayerKind::Conv2d { .. })
                && pair[0].out_shape != pair[1].in_shape
            {
                return Err(Error::shape(format!(
                    "conv layer {} expects {:?} but layer {k} emits {:?}",
                    k + 1,
                    pair[1].in_shape,
                    pair[0].out_shape
                )));
            }
        }
        Ok(())
    }

    /// The activation shared by all layers, if there is one.
    pub fn uniform_activation(&self) -> Option<ActivationKind> {
        let first = self.layers[0].activation;
        self.layers
            .iter()
            .all(|l| l.activation == first)
            .then_some(first)
    }
}

/// Integer parameters of one layer. Weights follow the model-file ordering:
/// `weight[target][source]` for dense layers and `[out_ch][in_ch][ky][kx]`
/// for convolutions. One threshold per output unit.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LayerParams {
    pub weights: Vec<i8>,
    pub theta: Vec<i8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantizedParams {
    pub layers: Vec<LayerParams>,
}

/// A validated network: topology plus 8-bit parameters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Model {
    pub spec: NetworkSpec,
    pub params: QuantizedParams,
}

impl Model {
    pub fn new(spec: NetworkSpec, params: QuantizedParams) -> Result<Self> {
        let model = Model { spec, params };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.params.layers.len() != self.spec.layers.len() {
            return Err(Error::invariant(format!(
                "{} parameter blocks for {} layers",
                self.params.layers.len(),
                self.spec.layers.len()
            )));
        }
        for (k, (layer, params)) in self.spec.layers.iter().zip(&self.params.layers).enumerate() {
            if params.weights.len() != layer.weight_count() {
                return Err(Error::invariant(format!(
                    "layer {k}: {} weights, expected {}",
                    params.weights.len(),
                    layer.weight_count()
                )));
            }
            if params.theta.len() != layer.out_size() {
                return Err(Error::invariant(format!(
                    "layer {k}: {} thresholds, expected {}",
                    params.theta.len(),
                    layer.out_size()
                )));
            }
            if let Some(t) = params.theta.iter().find(|&&t| t < 0) {
                return Err(Error::invariant(format!(
                    "layer {k}: negative threshold {t}"
                )));
            }
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.spec.layers.len()
    }
}

/// Narrow an integer to the 8-bit parameter range.
pub fn to_param(value: i64, what: &str) -> Result<i8> {
    if (PARAM_MIN as i64..=PARAM_MAX as i64).contains(&value) {
        Ok(value as i8)
    } else {
        Err(Error::invariant(format!(
            "{what} {value} outside [{PARAM_MIN}, {PARAM_MAX}]"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_output_shape_is_valid_convolution() {
        let l = LayerSpec::conv2d([1, 28, 28], 12, 5, ActivationKind::Binary).unwrap();
        assert_eq!(l.out_shape, vec![12, 24, 24]);
        assert_eq!(l.weight_count(), 12 * 25);
        assert_eq!(l.fan_in(), 25);
    }

    #[test]
    fn shapes_must_compose() {
        let bad = NetworkSpec::new(vec![
            LayerSpec::dense(4, 3, ActivationKind::Binary),
            LayerSpec::dense(2, 1, ActivationKind::Binary),
        ]);
        assert!(matches!(bad, Err(Error::Shape(_))));
    }

    #[test]
    fn zero_lambda_rejected() {
        assert!(ActivationKind::drelu(0).validate().is_err());
        assert!(ActivationKind::drelu(1).validate().is_ok());
    }

    #[test]
    fn empty_network_rejected() {
        assert!(NetworkSpec::new(vec![]).is_err());
    }

    #[test]
    fn param_range() {
        assert_eq!(to_param(-128, "w").unwrap(), -128);
        assert_eq!(to_param(127, "w").unwrap(), 127);
        assert!(to_param(200, "w").is_err());
        assert!(to_param(-129, "w").is_err());
    }
}
