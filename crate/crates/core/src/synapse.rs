//! Source-major synapse tables.
//!
//! Dense and convolutional layers are both lowered to a compressed table
//! listing, for every source unit, the `(target, weight)` pairs it feeds.
//! Zero weights are omitted. The event runtime only ever walks these tables.

use crate::types::{LayerKind, LayerParams, LayerSpec, Model};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynapseTable {
    offsets: Vec<u32>,
    targets: Vec<u32>,
    weights: Vec<i32>,
}

impl SynapseTable {
    pub fn lower(layer: &LayerSpec, params: &LayerParams) -> Self {
        let n_in = layer.in_size();
        let mut rows: Vec<Vec<(u32, i32)>> = vec![Vec::new(); n_in];
        match layer.kind {
            LayerKind::Dense => {
                for (target, row) in params.weights.chunks_exact(n_in).enumerate() {
                    for (source, &w) in row.iter().enumerate() {
                        if w != 0 {
                            rows[source].push((target as u32, w as i32));
                        }
                    }
                }
            }
            LayerKind::Conv2d { kernel, channels } => {
                let (in_ch, h, w) = (layer.in_shape[0], layer.in_shape[1], layer.in_shape[2]);
                let (oh, ow) = (h - kernel + 1, w - kernel + 1);
                for ci in 0..in_ch {
                    for y in 0..h {
                        for x in 0..w {
                            let source = (ci * h + y) * w + x;
                            for co in 0..channels {
                                for ky in 0..kernel {
                                    let Some(oy) = y.checked_sub(ky).filter(|&oy| oy < oh) else {
                                        continue;
                                    };
                                    for kx in 0..kernel {
                                        let Some(ox) = x.checked_sub(kx).filter(|&ox| ox < ow)
                                        else {
                                            continue;
                                        };
                                        let wi = ((co * in_ch + ci) * kernel + ky) * kernel + kx;
                                        let wt = params.weights[wi];
                                        if wt != 0 {
                                            let target = (co * oh + oy) * ow + ox;
                                            rows[source].push((target as u32, wt as i32));
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut offsets = Vec::with_capacity(n_in + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for row in rows {
            for (t, w) in row {
                targets.push(t);
                weights.push(w);
            }
            offsets.push(targets.len() as u32);
        }
        SynapseTable {
            offsets,
            targets,
            weights,
        }
    }

    pub fn num_sources(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_synapses(&self) -> usize {
        self.targets.len()
    }

    /// Targets and weights fed by `source`.
    #[inline]
    pub fn row(&self, source: usize) -> (&[u32], &[i32]) {
        let lo = self.offsets[source] as usize;
        let hi = self.offsets[source + 1] as usize;
        (&self.targets[lo..hi], &self.weights[lo..hi])
    }
}

/// A model together with its lowered synapse tables.
#[derive(Debug, Clone)]
pub struct Network {
    pub model: Model,
    pub tables: Vec<SynapseTable>,
}

impl Network {
    pub fn new(model: Model) -> Self {
        let tables = model
            .spec
            .layers
            .iter()
            .zip(&model.params.layers)
            .map(|(l, p)| SynapseTable::lower(l, p))
            .collect();
        Network { model, tables }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ActivationKind;

    #[test]
    fn dense_lowering_transposes_and_drops_zeros() {
        let layer = LayerSpec::dense(3, 2, ActivationKind::Binary);
        let params = LayerParams {
            weights: vec![1, 0, -3, 4, 5, 0],
            theta: vec![0, 0],
        };
        let t = SynapseTable::lower(&layer, &params);
        assert_eq!(t.row(0), (&[0u32, 1][..], &[1, 4][..]));
        assert_eq!(t.row(1), (&[1u32][..], &[5][..]));
        assert_eq!(t.row(2), (&[0u32][..], &[-3][..]));
        assert_eq!(t.num_synapses(), 4);
    }

    #[test]
    fn conv_lowering_matches_direct_convolution() {
        // 1x3x3 input, 2 maps of 2x2 kernels -> 2x2x2 output.
        let layer = LayerSpec::conv2d([1, 3, 3], 2, 2, ActivationKind::Binary).unwrap();
        let weights: Vec<i8> = (1..=8).collect();
        let params = LayerParams {
            weights: weights.clone(),
            theta: vec![0; 8],
        };
        let table = SynapseTable::lower(&layer, &params);
        let input: Vec<i32> = (0..9).map(|v| v * 2 - 7).collect();

        let mut via_table = vec![0i32; 8];
        for (s, &v) in input.iter().enumerate() {
            let (ts, ws) = table.row(s);
            for (&t, &w) in ts.iter().zip(ws) {
                via_table[t as usize] += w * v;
            }
        }
        let mut direct = vec![0i32; 8];
        for co in 0..2 {
            for oy in 0..2 {
                for ox in 0..2 {
                    let mut acc = 0;
                    for ky in 0..2 {
                        for kx in 0..2 {
                            acc += weights[co * 4 + ky * 2 + kx] as i32
                                * input[(oy + ky) * 3 + ox + kx];
                        }
                    }
                    direct[(co * 2 + oy) * 2 + ox] = acc;
                }
            }
        }
        assert_eq!(via_table, direct);
    }
}
