//! Finite-difference verification of the analytic surrogate gradients.

use super::backprop::{self, layer_net, ForwardMode, ShadowLayer, Surrogates};
use super::linalg::Mat;
use super::quantize_layers;
use crate::types::{ActivationKind, LayerKind, NetworkSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter with the largest error as (layer, "w"|"theta", index).
    pub worst: Option<(usize, &'static str, usize)>,
}

/// Smallest distance from any discretized-ReLU pre-activation to its kink
/// at `lambda / 2`, over the whole batch. Infinite for binary networks.
pub fn kink_margin(spec: &NetworkSpec, shadow: &[ShadowLayer], input: &Mat, steepness: f64) -> f64 {
    let mut y = input.clone();
    let mut margin = f64::INFINITY;
    for (layer, sh) in spec.layers.iter().zip(shadow) {
        let net = layer_net(layer, &sh.weights, &y);
        let mut out = Mat::zeros(net.rows, net.cols);
        for b in 0..net.rows {
            for ((o, &x), &t) in out.row_mut(b).iter_mut().zip(net.row(b)).zip(&sh.theta) {
                let pre = x - t;
                if let ActivationKind::DiscretizedRelu { lambda } = layer.activation {
                    margin = margin.min((pre - lambda as f64 / 2.0).abs());
                }
                *o = super::surrogate::surrogate(layer.activation, pre, steepness).0;
            }
        }
        y = out;
    }
    margin
}

fn objective(
    spec: &NetworkSpec,
    shadow: &[ShadowLayer],
    input: &Mat,
    labels: &[u8],
    surrogates: Surrogates,
    penalty: f64,
) -> f64 {
    let q = quantize_layers(shadow);
    let fwd = backprop::forward(
        spec,
        shadow,
        &q,
        input.clone(),
        ForwardMode::Surrogate,
        surrogates,
    );
    backprop::loss(&fwd.logits, labels, shadow, penalty)
}

/// Compares every analytic gradient of the surrogate-mode loss with a
/// central difference of step `h`. The error for each parameter is
/// `|a - n| / max(|a| + |n|, 1e-7)`.
///
/// Convolution thresholds are checked as tied parameters: shifting a whole
/// feature map's thresholds together must change the loss by the map size
/// times the reported per-unit gradient.
pub fn gradient_check(
    spec: &NetworkSpec,
    shadow: &[ShadowLayer],
    input: &Mat,
    labels: &[u8],
    surrogates: Surrogates,
    penalty: f64,
    h: f64,
) -> GradCheckReport {
    let q = quantize_layers(shadow);
    let fwd = backprop::forward(
        spec,
        shadow,
        &q,
        input.clone(),
        ForwardMode::Surrogate,
        surrogates,
    );
    let (_, grads) = backprop::backward(spec, shadow, &fwd, labels, penalty);

    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let mut record = |analytic: f64, numeric: f64, at: (usize, &'static str, usize)| {
        let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-7);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some(at);
        }
    };
    let central = |perturb: &dyn Fn(&mut Vec<ShadowLayer>, f64)| {
        let mut s = shadow.to_vec();
        perturb(&mut s, h);
        let plus = objective(spec, &s, input, labels, surrogates, penalty);
        let mut s = shadow.to_vec();
        perturb(&mut s, -h);
        let minus = objective(spec, &s, input, labels, surrogates, penalty);
        (plus - minus) / (2.0 * h)
    };

    for (k, layer) in spec.layers.iter().enumerate() {
        for i in 0..shadow[k].weights.len() {
            let n = central(&|s, d| s[k].weights[i] += d);
            record(grads[k].weights[i], n, (k, "w", i));
        }
        match layer.kind {
            LayerKind::Dense => {
                for i in 0..shadow[k].theta.len() {
                    let n = central(&|s, d| s[k].theta[i] += d);
                    record(grads[k].theta[i], n, (k, "theta", i));
                }
            }
            LayerKind::Conv2d { channels, .. } => {
                let per_map = layer.out_size() / channels;
                for c in 0..channels {
                    let range = c * per_map..(c + 1) * per_map;
                    let r = range.clone();
                    let n = central(&|s, d| s[k].theta[r.clone()].iter_mut().for_each(|t| *t += d));
                    record(
                        grads[k].theta[range.start] * per_map as f64,
                        n,
                        (k, "theta", range.start),
                    );
                }
            }
        }
    }
    report
}
