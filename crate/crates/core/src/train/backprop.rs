//! Batched forward and backward passes.
//!
//! In straight-through mode each layer is evaluated twice: once with the
//! quantized integer parameters and the discrete activation (whose output
//! feeds the next layer), and once with the real-valued shadow parameters on
//! the same inputs, which supplies the surrogate derivative. The loss is read
//! from the surrogate output of the final layer. In surrogate mode the
//! discrete path is skipped and surrogate outputs feed forward, which makes
//! the whole network a smooth function suitable for gradient checking.

use serde::{Deserialize, Serialize};

use crate::frame::activate;
use crate::types::{ActivationKind, LayerKind, LayerSpec, NetworkSpec, QuantizedParams};

use super::linalg::{gemm, Mat, View};
use super::surrogate::surrogate;

/// Real-valued parameters of one layer, shaped like [`crate::LayerParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowLayer {
    pub weights: Vec<f64>,
    pub theta: Vec<f64>,
}

impl ShadowLayer {
    pub fn zeros_like(layer: &LayerSpec) -> Self {
        ShadowLayer {
            weights: vec![0.0; layer.weight_count()],
            theta: vec![0.0; layer.out_size()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    StraightThrough,
    Surrogate,
}

/// What the loss reads from the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Logits {
    /// The final layer's surrogate activation.
    Activation,
    /// The surrogate's linear part: `(x - theta) / lambda - 1/2` for
    /// discretized ReLU and `steepness * (x - theta)` for binary. Monotone
    /// in `x - theta`, like the class decision.
    #[default]
    Linear,
}

/// Backward-pass stand-ins for the discrete activations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Surrogates {
    pub steepness: f64,
    pub logits: Logits,
}

impl Default for Surrogates {
    fn default() -> Self {
        Surrogates {
            steepness: 1.0,
            logits: Logits::default(),
        }
    }
}

fn linear_logit(kind: ActivationKind, x: f64, steepness: f64) -> (f64, f64) {
    match kind {
        ActivationKind::Binary => (steepness * x, steepness),
        ActivationKind::DiscretizedRelu { lambda } => {
            let l = lambda as f64;
            (x / l - 0.5, 1.0 / l)
        }
    }
}

/// `W . y` for each row of `input`, without thresholds.
pub fn layer_net(layer: &LayerSpec, weights: &[f64], input: &Mat) -> Mat {
    let batch = input.rows;
    let n_out = layer.out_size();
    let mut out = Mat::zeros(batch, n_out);
    match layer.kind {
        LayerKind::Dense => {
            let n_in = layer.in_size();
            gemm(
                batch,
                n_in,
                n_out,
                View::normal(&input.data, n_in),
                View::transposed(weights, n_in),
                0.0,
                &mut out.data,
            );
        }
        LayerKind::Conv2d { kernel, channels } => {
            let geo = ConvGeometry::new(layer, kernel);
            let mut patches = vec![0.0; geo.positions * geo.patch];
            for b in 0..batch {
                geo.im2col(input.row(b), &mut patches);
                // (channels x patch) . (patch x positions)
                gemm(
                    channels,
                    geo.patch,
                    geo.positions,
                    View::normal(weights, geo.patch),
                    View::transposed(&patches, geo.patch),
                    0.0,
                    out.row_mut(b),
                );
            }
        }
    }
    out
}

/// Weight gradient `dpre^T . input` and, optionally, the input gradient
/// `dpre . W`.
pub fn layer_backward(
    layer: &LayerSpec,
    weights: &[f64],
    input: &Mat,
    dpre: &Mat,
    want_input_grad: bool,
) -> (Vec<f64>, Option<Mat>) {
    let batch = input.rows;
    let n_out = layer.out_size();
    let n_in = layer.in_size();
    let mut dw = vec![0.0; layer.weight_count()];
    match layer.kind {
        LayerKind::Dense => {
            gemm(
                n_out,
                batch,
                n_in,
                View::transposed(&dpre.data, n_out),
                View::normal(&input.data, n_in),
                0.0,
                &mut dw,
            );
            let din = want_input_grad.then(|| {
                let mut din = Mat::zeros(batch, n_in);
                gemm(
                    batch,
                    n_out,
                    n_in,
                    View::normal(&dpre.data, n_out),
                    View::normal(weights, n_in),
                    0.0,
                    &mut din.data,
                );
                din
            });
            (dw, din)
        }
        LayerKind::Conv2d { kernel, channels } => {
            let geo = ConvGeometry::new(layer, kernel);
            let mut patches = vec![0.0; geo.positions * geo.patch];
            let mut dpatches = vec![0.0; geo.positions * geo.patch];
            let mut din = want_input_grad.then(|| Mat::zeros(batch, n_in));
            for b in 0..batch {
                geo.im2col(input.row(b), &mut patches);
                // (channels x positions) . (positions x patch)
                gemm(
                    channels,
                    geo.positions,
                    geo.patch,
                    View::normal(dpre.row(b), geo.positions),
                    View::normal(&patches, geo.patch),
                    1.0,
                    &mut dw,
                );
                if let Some(din) = &mut din {
                    // (positions x channels) . (channels x patch)
                    gemm(
                        geo.positions,
                        channels,
                        geo.patch,
                        View::transposed(dpre.row(b), geo.positions),
                        View::normal(weights, geo.patch),
                        0.0,
                        &mut dpatches,
                    );
                    geo.col2im_add(&dpatches, din.row_mut(b));
                }
            }
            (dw, din)
        }
    }
}

struct ConvGeometry {
    in_ch: usize,
    h: usize,
    w: usize,
    kernel: usize,
    ow: usize,
    positions: usize,
    patch: usize,
}

impl ConvGeometry {
    fn new(layer: &LayerSpec, kernel: usize) -> Self {
        let (in_ch, h, w) = (layer.in_shape[0], layer.in_shape[1], layer.in_shape[2]);
        let (oh, ow) = (h - kernel + 1, w - kernel + 1);
        ConvGeometry {
            in_ch,
            h,
            w,
            kernel,
            ow,
            positions: oh * ow,
            patch: in_ch * kernel * kernel,
        }
    }

    /// Patch matrix: row = output position, column = (ci, ky, kx).
    fn im2col(&self, input: &[f64], patches: &mut [f64]) {
        let k = self.kernel;
        for p in 0..self.positions {
            let (oy, ox) = (p / self.ow, p % self.ow);
            let row = &mut patches[p * self.patch..(p + 1) * self.patch];
            for ci in 0..self.in_ch {
                for ky in 0..k {
                    let src = (ci * self.h + oy + ky) * self.w + ox;
                    let dst = (ci * k + ky) * k;
                    row[dst..dst + k].copy_from_slice(&input[src..src + k]);
                }
            }
        }
    }

    fn col2im_add(&self, dpatches: &[f64], din: &mut [f64]) {
        let k = self.kernel;
        for p in 0..self.positions {
            let (oy, ox) = (p / self.ow, p % self.ow);
            let row = &dpatches[p * self.patch..(p + 1) * self.patch];
            for ci in 0..self.in_ch {
                for ky in 0..k {
                    let dst = (ci * self.h + oy + ky) * self.w + ox;
                    let src = (ci * k + ky) * k;
                    for kx in 0..k {
                        din[dst + kx] += row[src + kx];
                    }
                }
            }
        }
    }
}

/// What the backward pass needs from one layer.
struct LayerTape {
    input: Mat,
    derivative: Mat,
}

pub struct ForwardResult {
    /// Real-valued final-layer output the loss is computed from.
    pub logits: Mat,
    /// Discrete final-layer outputs and integer pre-activations (straight-through only).
    pub discrete_output: Option<Mat>,
    pub discrete_preactivation: Option<Mat>,
    tape: Vec<LayerTape>,
}

/// Converts an exact-integer f64 produced by the quantized pass.
#[inline]
fn exact_int(v: f64) -> i32 {
    debug_assert!(
        v.fract() == 0.0 && v.abs() < i32::MAX as f64,
        "non-integer {v}"
    );
    v as i32
}

/// Discrete forward pass with quantized parameters only.
pub fn quantized_forward(spec: &NetworkSpec, params: &QuantizedParams, input: Mat) -> (Mat, Mat) {
    let mut y = input;
    let mut pre = Mat::zeros(0, 0);
    for (layer, p) in spec.layers.iter().zip(&params.layers) {
        let wq: Vec<f64> = p.weights.iter().map(|&w| w as f64).collect();
        let net = layer_net(layer, &wq, &y);
        let (out, pq) = discretize(layer.activation, &net, &p.theta);
        y = out;
        pre = pq;
    }
    (y, pre)
}

fn discretize(activation: ActivationKind, net: &Mat, theta: &[i8]) -> (Mat, Mat) {
    let mut out = Mat::zeros(net.rows, net.cols);
    let mut pre = Mat::zeros(net.rows, net.cols);
    for b in 0..net.rows {
        for ((o, p), (&x, &t)) in out
            .row_mut(b)
            .iter_mut()
            .zip(pre.row_mut(b).iter_mut())
            .zip(net.row(b).iter().zip(theta))
        {
            let xi = exact_int(x);
            *o = activate(activation, xi, t as i32) as f64;
            *p = (xi - t as i32) as f64;
        }
    }
    (out, pre)
}

pub fn forward(
    spec: &NetworkSpec,
    shadow: &[ShadowLayer],
    quantized: &QuantizedParams,
    input: Mat,
    mode: ForwardMode,
    surrogates: Surrogates,
) -> ForwardResult {
    let mut tape = Vec::with_capacity(spec.layers.len());
    let mut y = input;
    let mut discrete_output = None;
    let mut discrete_preactivation = None;
    let last = spec.layers.len() - 1;
    let mut logits = Mat::zeros(0, 0);
    for (k, layer) in spec.layers.iter().enumerate() {
        let sh = &shadow[k];
        let mut pre = layer_net(layer, &sh.weights, &y);
        let mut surr = Mat::zeros(pre.rows, pre.cols);
        let linear = k == last && surrogates.logits == Logits::Linear;
        for b in 0..pre.rows {
            let (prow, srow) = (pre.row_mut(b), surr.row_mut(b));
            for ((p, s), &t) in prow.iter_mut().zip(srow.iter_mut()).zip(&sh.theta) {
                let x = *p - t;
                let (value, deriv) = if linear {
                    linear_logit(layer.activation, x, surrogates.steepness)
                } else {
                    surrogate(layer.activation, x, surrogates.steepness)
                };
                *s = value;
                *p = deriv;
            }
        }
        let next = match mode {
            ForwardMode::Surrogate => None,
            ForwardMode::StraightThrough => {
                let p = &quantized.layers[k];
                let wq: Vec<f64> = p.weights.iter().map(|&w| w as f64).collect();
                let net = layer_net(layer, &wq, &y);
                Some(discretize(layer.activation, &net, &p.theta))
            }
        };
        let derivative = pre;
        let input = std::mem::replace(
            &mut y,
            match (&next, k == last) {
                (Some((out, _)), false) => out.clone(),
                _ => surr.clone(),
            },
        );
        tape.push(LayerTape { input, derivative });
        if k == last {
            logits = surr;
            if let Some((out, pq)) = next {
                discrete_output = Some(out);
                discrete_preactivation = Some(pq);
            }
        }
    }
    ForwardResult {
        logits,
        discrete_output,
        discrete_preactivation,
        tape,
    }
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Mat, labels: &[u8]) -> (f64, Mat) {
    let batch = logits.rows;
    let mut grad = Mat::zeros(logits.rows, logits.cols);
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate().take(batch) {
        let row = logits.row(b);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        let label = label as usize;
        total += lse - row[label];
        let g = grad.row_mut(b);
        for (i, gi) in g.iter_mut().enumerate() {
            let p = (row[i] - lse).exp();
            *gi = (p - if i == label { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    (total / batch as f64, grad)
}

/// Hinge penalty `weight * sum(max(0, -theta))` over all shadow thresholds.
pub fn bias_penalty(shadow: &[ShadowLayer], weight: f64) -> f64 {
    weight
        * shadow
            .iter()
            .flat_map(|l| &l.theta)
            .map(|&t| (-t).max(0.0))
            .sum::<f64>()
}

/// Total objective: cross-entropy plus threshold penalty.
pub fn loss(logits: &Mat, labels: &[u8], shadow: &[ShadowLayer], penalty_weight: f64) -> f64 {
    cross_entropy(logits, labels).0 + bias_penalty(shadow, penalty_weight)
}

/// Gradients of [`loss`] with respect to every shadow parameter.
///
/// Convolution thresholds receive the mean gradient of their feature map.
pub fn backward(
    spec: &NetworkSpec,
    shadow: &[ShadowLayer],
    fwd: &ForwardResult,
    labels: &[u8],
    penalty_weight: f64,
) -> (f64, Vec<ShadowLayer>) {
    let (ce, mut g) = cross_entropy(&fwd.logits, labels);
    let value = ce + bias_penalty(shadow, penalty_weight);
    let mut grads: Vec<ShadowLayer> = Vec::with_capacity(spec.layers.len());
    for k in (0..spec.layers.len()).rev() {
        let layer = &spec.layers[k];
        let tape = &fwd.tape[k];
        let mut dpre = g;
        for (d, &s) in dpre.data.iter_mut().zip(&tape.derivative.data) {
            *d *= s;
        }
        let (dw, din) = layer_backward(layer, &shadow[k].weights, &tape.input, &dpre, k > 0);
        let mut dtheta = vec![0.0; layer.out_size()];
        for b in 0..dpre.rows {
            for (t, &d) in dtheta.iter_mut().zip(dpre.row(b)) {
                *t -= d;
            }
        }
        for (t, &s) in dtheta.iter_mut().zip(&shadow[k].theta) {
            if s < 0.0 {
                *t -= penalty_weight;
            }
        }
        if let LayerKind::Conv2d { channels, .. } = layer.kind {
            let per_map = layer.out_size() / channels;
            for map in dtheta.chunks_exact_mut(per_map) {
                let mean = map.iter().sum::<f64>() / per_map as f64;
                map.iter_mut().for_each(|t| *t = mean);
            }
        }
        grads.push(ShadowLayer {
            weights: dw,
            theta: dtheta,
        });
        g = din.unwrap_or_else(|| Mat::zeros(0, 0));
    }
    grads.reverse();
    (value, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::LayerSpec;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let logits = Mat::from_vec(2, 10, vec![0.3; 20]);
        let (l, g) = cross_entropy(&logits, &[3, 7]);
        assert!((l - 10f64.ln()).abs() < 1e-12);
        assert!((g.row(0)[3] - (0.1 - 1.0) / 2.0).abs() < 1e-12);
        assert!((g.row(0)[0] - 0.1 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn penalty_zero_for_nonnegative_thresholds() {
        let s = vec![ShadowLayer {
            weights: vec![1.0],
            theta: vec![0.0, 3.0],
        }];
        assert_eq!(bias_penalty(&s, 5.0), 0.0);
        let s = vec![ShadowLayer {
            weights: vec![1.0],
            theta: vec![-2.0, 3.0],
        }];
        assert_eq!(bias_penalty(&s, 0.5), 1.0);
    }

    #[test]
    fn conv_layer_net_matches_direct_loops() {
        let layer = LayerSpec::conv2d([2, 4, 4], 3, 3, ActivationKind::Binary).unwrap();
        let weights: Vec<f64> = (0..layer.weight_count())
            .map(|i| (i as f64 * 0.7).sin())
            .collect();
        let input = Mat::from_vec(2, 32, (0..64).map(|i| (i % 5) as f64 - 2.0).collect());
        let out = layer_net(&layer, &weights, &input);
        for b in 0..2 {
            for co in 0..3 {
                for oy in 0..2 {
                    for ox in 0..2 {
                        let mut acc = 0.0;
                        for ci in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    acc += weights[((co * 2 + ci) * 3 + ky) * 3 + kx]
                                        * input.row(b)[(ci * 4 + oy + ky) * 4 + ox + kx];
                                }
                            }
                        }
                        let got = out.row(b)[(co * 2 + oy) * 2 + ox];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
