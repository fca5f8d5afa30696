//! Frame-based integer forward pass.
//!
//! This is the reference semantics: every layer computes its full output
//! before the next one starts. The event runtime must reproduce the final
//! layer of this pass exactly.

use crate::error::{Error, Result};
use crate::ledger::OpLedger;
use crate::types::{ActivationKind, LayerKind, LayerParams, LayerSpec, Model};

/// 1 iff `x > 0`.
#[inline]
pub fn binary_step(x: i32) -> i32 {
    (x > 0) as i32
}

/// Discretized ReLU `max(0, floor((x - theta) / lambda))`.
#[inline]
pub fn drelu(x: i32, theta: i32, lambda: u32) -> i32 {
    debug_assert!(lambda >= 1);
    (x - theta).div_euclid(lambda as i32).max(0)
}

/// Output of one neuron with net input `x` (before threshold).
#[inline]
pub fn activate(kind: ActivationKind, x: i32, theta: i32) -> i32 {
    match kind {
        ActivationKind::Binary => binary_step(x - theta),
        ActivationKind::DiscretizedRelu { lambda } => drelu(x, theta, lambda),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerActivation {
    /// `W . y_prev`, before the threshold is subtracted.
    pub net_input: Vec<i32>,
    pub output: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationRecord {
    pub layers: Vec<LayerActivation>,
}

impl ActivationRecord {
    pub fn final_layer(&self) -> &LayerActivation {
        self.layers.last().expect("record has at least one layer")
    }

    pub fn output(&self) -> &[i32] {
        &self.final_layer().output
    }
}

fn accumulate_dense(
    layer: &LayerSpec,
    params: &LayerParams,
    input: &[i32],
    net: &mut [i32],
    ledger: &mut OpLedger,
    k: usize,
) {
    let n_in = layer.in_size();
    let active: Vec<(usize, i32)> = input
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .map(|(j, &v)| (j, v))
        .collect();
    for (x, row) in net.iter_mut().zip(params.weights.chunks_exact(n_in)) {
        let mut acc = 0i32;
        for &(j, v) in &active {
            let w = row[j] as i32;
            acc += if v == 1 { w } else { ledger.mul(w, v) };
        }
        *x = acc;
    }
    let charged: u64 = active.iter().map(|&(_, v)| v as u64).sum::<u64>() * layer.out_size() as u64;
    ledger.charge_additions(k, charged);
}

#[allow(clippy::too_many_arguments)]
fn accumulate_conv(
    layer: &LayerSpec,
    params: &LayerParams,
    input: &[i32],
    net: &mut [i32],
    ledger: &mut OpLedger,
    k: usize,
    kernel: usize,
    channels: usize,
) {
    let (in_ch, h, w) = (layer.in_shape[0], layer.in_shape[1], layer.in_shape[2]);
    let (oh, ow) = (h - kernel + 1, w - kernel + 1);
    let mut charged = 0u64;
    for co in 0..channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0i32;
                for ci in 0..in_ch {
                    for ky in 0..kernel {
                        let row = (ci * h + oy + ky) * w + ox;
                        let wrow = ((co * in_ch + ci) * kernel + ky) * kernel;
                        for kx in 0..kernel {
                            let v = input[row + kx];
                            if v == 0 {
                                continue;
                            }
                            let wt = params.weights[wrow + kx] as i32;
                            acc += if v == 1 { wt } else { ledger.mul(wt, v) };
                            charged += v as u64;
                        }
                    }
                }
                net[(co * oh + oy) * ow + ox] = acc;
            }
        }
    }
    ledger.charge_additions(k, charged);
}

/// Full forward pass, charging the cost model to `ledger`.
pub fn forward_with_ledger(
    model: &Model,
    input: &[i32],
    ledger: &mut OpLedger,
) -> Result<ActivationRecord> {
    if input.len() != model.spec.input_size() {
        return Err(Error::shape(format!(
            "input has {} entries, network expects {}",
            input.len(),
            model.spec.input_size()
        )));
    }
    if let Some(v) = input.iter().find(|&&v| v < 0) {
        return Err(Error::InvalidArgument(format!("negative input value {v}")));
    }
    ledger.begin_input_event();
    let mut layers: Vec<LayerActivation> = Vec::with_capacity(model.num_layers());
    for (k, (layer, params)) in model
        .spec
        .layers
        .iter()
        .zip(&model.params.layers)
        .enumerate()
    {
        let y_prev = layers.last().map_or(input, |l| l.output.as_slice());
        let mut net = vec![0i32; layer.out_size()];
        match layer.kind {
            LayerKind::Dense => accumulate_dense(layer, params, y_prev, &mut net, ledger, k),
            LayerKind::Conv2d { kernel, channels } => {
                accumulate_conv(layer, params, y_prev, &mut net, ledger, k, kernel, channels)
            }
        }
        let output = net
            .iter()
            .zip(&params.theta)
            .map(|(&x, &t)| activate(layer.activation, x, t as i32))
            .collect();
        layers.push(LayerActivation {
            net_input: net,
            output,
        });
    }
    Ok(ActivationRecord { layers })
}

pub fn forward(model: &Model, input: &[i32]) -> Result<ActivationRecord> {
    let mut ledger = OpLedger::new(model.num_layers());
    forward_with_ledger(model, input, &mut ledger)
}

/// Class decision from final-layer outputs `y` and pre-activations
/// `x - theta`.
///
/// Discretized-ReLU layers: argmax of `y`, ties broken by the pre-activation,
/// then by lowest index. Binary layers: argmax of the pre-activation, ties by
/// lowest index.
pub fn decide<Y, P>(activation: ActivationKind, output: &[Y], preactivation: &[P]) -> usize
where
    Y: PartialOrd + Copy,
    P: PartialOrd + Copy,
{
    let mut best = 0;
    for i in 1..preactivation.len() {
        let better = match activation {
            ActivationKind::Binary => preactivation[i] > preactivation[best],
            ActivationKind::DiscretizedRelu { .. } => {
                output[i] > output[best]
                    || (output[i] == output[best] && preactivation[i] > preactivation[best])
            }
        };
        if better {
            best = i;
        }
    }
    best
}

pub fn predict_from_record(model: &Model, record: &ActivationRecord) -> usize {
    let last = record.final_layer();
    let theta = &model.params.layers.last().expect("non-empty").theta;
    let pre: Vec<i32> = last
        .net_input
        .iter()
        .zip(theta)
        .map(|(&x, &t)| x - t as i32)
        .collect();
    let activation = model.spec.layers.last().expect("non-empty").activation;
    decide(activation, &last.output, &pre)
}

pub fn predict(model: &Model, input: &[i32]) -> Result<usize> {
    Ok(predict_from_record(model, &forward(model, input)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{NetworkSpec, QuantizedParams};
    use proptest::prelude::*;

    fn one_neuron(activation: ActivationKind, w: i8, theta: i8) -> Model {
        Model::new(
            NetworkSpec::new(vec![LayerSpec::dense(1, 1, activation)]).unwrap(),
            QuantizedParams {
                layers: vec![LayerParams {
                    weights: vec![w],
                    theta: vec![theta],
                }],
            },
        )
        .unwrap()
    }

    /// Extended counter neuron stepped one input at a time; returns z.
    fn trace_extended(theta: i32, lambda: i32, inputs: &[i32]) -> i32 {
        let (mut c, mut z) = (-theta, 0);
        for &inp in inputs {
            c += inp;
            while c >= lambda {
                c -= lambda;
                z += 1;
            }
            while z > 0 && c < 0 {
                c += lambda;
                z -= 1;
            }
        }
        z
    }

    #[test]
    fn step_is_strict() {
        assert_eq!(binary_step(0), 0);
        assert_eq!(binary_step(1), 1);
        assert_eq!(binary_step(-5), 0);
    }

    #[test]
    fn drelu_examples() {
        assert_eq!(drelu(-3, 0, 2), 0);
        assert_eq!(drelu(5, 0, 2), 2);
        assert_eq!(trace_extended(0, 2, &[1, 1, 1, 1, 1]), 2);
        for lambda in [1, 2, 4, 64] {
            for k in 1..6 {
                let x = k * lambda;
                assert_eq!(drelu(x, 0, lambda as u32), k);
                // epsilon form: floor((k*lambda + eps)/lambda) for eps in (0,1)
                for eps in [1e-6, 0.5, 0.999] {
                    assert_eq!(((x as f64 + eps) / lambda as f64).floor() as i32, k);
                }
                assert_eq!(trace_extended(0, lambda, &[x]), k);
            }
        }
    }

    #[test]
    fn drelu_with_unit_step_is_not_binary() {
        // Witness: same net input, different outputs.
        assert_eq!(drelu(3, 0, 1), 3);
        assert_eq!(binary_step(3), 1);
        assert_ne!(drelu(3, 0, 1).min(1), drelu(3, 0, 1));
    }

    #[test]
    fn hand_checkable_forward() {
        let m = one_neuron(ActivationKind::Binary, 2, 1);
        let r = forward(&m, &[1]).unwrap();
        assert_eq!(r.layers[0].net_input, vec![2]);
        assert_eq!(r.output(), &[1]);
        assert_eq!(forward(&m, &[0]).unwrap().output(), &[0]);
    }

    #[test]
    fn forward_errors() {
        let m = one_neuron(ActivationKind::Binary, 2, 1);
        assert!(matches!(forward(&m, &[1, 1]), Err(Error::Shape(_))));
        assert!(forward(&m, &[-1]).is_err());
    }

    #[test]
    fn ledger_charges_repeated_additions() {
        let m = Model::new(
            NetworkSpec::new(vec![LayerSpec::dense(3, 2, ActivationKind::drelu(2))]).unwrap(),
            QuantizedParams {
                layers: vec![LayerParams {
                    weights: vec![1, 2, 3, 4, 5, 6],
                    theta: vec![0, 0],
                }],
            },
        )
        .unwrap();
        let mut ledger = OpLedger::new(1);
        let r = forward_with_ledger(&m, &[3, 0, 1], &mut ledger).unwrap();
        assert_eq!(r.layers[0].net_input, vec![6, 18]);
        // (3 + 1) units of input, each fanning out to 2 targets
        assert_eq!(ledger.additions, 8);
        assert_eq!(ledger.multiplications, 2);
    }

    #[test]
    fn predict_tie_breaks() {
        let drelu = ActivationKind::drelu(4);
        assert_eq!(decide(drelu, &[0, 0, 3, 0], &[0, 0, 12, 0]), 2);
        assert_eq!(decide(drelu, &[1, 1, 0], &[4, 7, 0]), 1);
        assert_eq!(decide(drelu, &[1, 1, 0], &[5, 5, 0]), 0);
        let y = [0; 4];
        assert_eq!(decide(ActivationKind::Binary, &y, &[-5, -1, -3, -2]), 1);
        assert_eq!(decide(ActivationKind::Binary, &[1, 1, 0], &[3, 3, -1]), 0);
    }

    proptest! {
        #[test]
        fn drelu_monotone(x in -10_000i32..10_000, d in 0i32..500, theta in 0i32..128, lambda in 1u32..200) {
            prop_assert!(drelu(x, theta, lambda) <= drelu(x + d, theta, lambda));
        }

        #[test]
        fn drelu_matches_alg2_trace(theta in 0i32..40, lambda in 1i32..70, inputs in proptest::collection::vec(-128i32..128, 0..30)) {
            let x: i32 = inputs.iter().sum();
            prop_assert_eq!(trace_extended(theta, lambda, &inputs), drelu(x, theta, lambda as u32));
        }
    }
}
