//! Continuous stand-ins for the discrete activations, and quantization of
//! real-valued shadow parameters to the 8-bit forward parameters.

use crate::types::{ActivationKind, PARAM_MAX, PARAM_MIN};

/// Logistic sigmoid `1 / (1 + exp(-steepness * x))`.
#[inline]
pub fn surrogate_sigmoid(x: f64, steepness: f64) -> f64 {
    1.0 / (1.0 + (-steepness * x).exp())
}

#[inline]
pub fn surrogate_sigmoid_derivative(x: f64, steepness: f64) -> f64 {
    let s = surrogate_sigmoid(x, steepness);
    steepness * s * (1.0 - s)
}

/// Shifted and scaled ReLU `max(0, x / lambda - 1/2)`.
#[inline]
pub fn surrogate_drelu(x: f64, lambda: u32) -> f64 {
    (x / lambda as f64 - 0.5).max(0.0)
}

/// Subgradient of [`surrogate_drelu`]; zero at and below the kink `lambda / 2`.
#[inline]
pub fn surrogate_drelu_derivative(x: f64, lambda: u32) -> f64 {
    if x / lambda as f64 - 0.5 > 0.0 {
        1.0 / lambda as f64
    } else {
        0.0
    }
}

/// Surrogate value and derivative for an activation at pre-activation `x`.
#[inline]
pub fn surrogate(kind: ActivationKind, x: f64, steepness: f64) -> (f64, f64) {
    match kind {
        ActivationKind::Binary => {
            let s = surrogate_sigmoid(x, steepness);
            (s, steepness * s * (1.0 - s))
        }
        ActivationKind::DiscretizedRelu { lambda } => (
            surrogate_drelu(x, lambda),
            surrogate_drelu_derivative(x, lambda),
        ),
    }
}

/// Rounds half away from zero, then clamps to `[-128, 127]`.
#[inline]
pub fn quantize(value: f64) -> i8 {
    value.round().clamp(PARAM_MIN as f64, PARAM_MAX as f64) as i8
}

/// As [`quantize`], additionally clamped below at zero.
#[inline]
pub fn quantize_threshold(value: f64) -> i8 {
    quantize(value).max(0)
}
