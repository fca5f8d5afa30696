//! Early-classification and operation-count curves for event-driven runs.
//!
//! Every input is streamed one event per timestep in a seeded random order.
//! After each event the runtime is quiescent, so the accumulators can be
//! compared with the frame-based output and the additions spent so far can
//! be read from the ledger. Curves are indexed by `k`, the number of input
//! events consumed; inputs with fewer than `k` events contribute their final
//! state.

use std::io::Write;

use serde::Serialize;

use crate::data::stream_pixels;
use crate::error::{Error, Result};
use crate::event::{readout, NeuronModel, RunOptions, Runtime};
use crate::frame;
use crate::seed::SeedStream;
use crate::synapse::Network;
use crate::types::Model;

/// One streamed input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputRun {
    pub label: Option<u8>,
    pub num_events: usize,
    /// Accumulators equal the frame output, for k = 0..=num_events.
    pub frame_match: Vec<bool>,
    /// Readout equals the label, for k = 0..=num_events.
    pub label_match: Vec<bool>,
    /// Readout equals the frame-based prediction, for k = 0..=num_events.
    pub prediction_match: Vec<bool>,
    /// Additions triggered by event k (1-based, stored at k - 1).
    pub additions: Vec<u64>,
    /// Events emitted inside the network after event k.
    pub cumulative_events: Vec<u64>,
    pub ledger_additions: u64,
    pub multiplications: u64,
}

impl InputRun {
    /// Smallest k from which the predicate holds for the rest of the stream.
    fn settle(flags: &[bool]) -> usize {
        flags.iter().rposition(|&f| !f).map_or(0, |i| i + 1)
    }

    /// First event count after which the accumulators match the frame
    /// output for good.
    pub fn frame_settle(&self) -> usize {
        Self::settle(&self.frame_match)
    }

    /// First event count after which the readout agrees with the frame
    /// prediction for good.
    pub fn prediction_settle(&self) -> usize {
        Self::settle(&self.prediction_match)
    }

    pub fn cumulative_additions(&self, k: usize) -> u64 {
        self.additions[..k.min(self.num_events)].iter().sum()
    }

    /// Mean additions per event over each quarter of this input's stream.
    pub fn quartile_means(&self) -> Option<[f64; 4]> {
        let n = self.num_events;
        if n < 4 {
            return None;
        }
        let mut out = [0.0; 4];
        for (q, slot) in out.iter_mut().enumerate() {
            let (lo, hi) = (q * n / 4, (q + 1) * n / 4);
            let part = &self.additions[lo..hi];
            *slot = part.iter().sum::<u64>() as f64 / part.len() as f64;
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationCurve {
    pub frac_frame_match: Vec<f64>,
    pub frac_label_match: Vec<f64>,
    pub frac_prediction_match: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpsCurve {
    /// Mean additions triggered by event k over inputs that have an event k.
    pub mean_adds_this_event: Vec<f64>,
    pub active_inputs: Vec<usize>,
    /// Mean additions spent after k events, over all inputs.
    pub mean_cum_adds: Vec<f64>,
    pub mean_cum_events: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveSet {
    pub model: NeuronModel,
    pub seed: u64,
    pub classification: ClassificationCurve,
    pub ops: OpsCurve,
    #[serde(skip)]
    pub runs: Vec<InputRun>,
}

/// Streams one input to quiescence after every event, recording agreement
/// and cost.
pub fn run_input(
    net: &Network,
    input: &[i32],
    label: Option<u8>,
    order_seed: u64,
) -> Result<InputRun> {
    let model = &net.model;
    let record = frame::forward(model, input)?;
    let expected = record.output();
    let predicted = frame::predict_from_record(model, &record);
    let stream = stream_pixels(input, order_seed)?;

    let mut rt = Runtime::new(net, RunOptions::default());
    let n = stream.len();
    let mut run = InputRun {
        label,
        num_events: n,
        frame_match: Vec::with_capacity(n + 1),
        label_match: Vec::with_capacity(n + 1),
        prediction_match: Vec::with_capacity(n + 1),
        additions: Vec::with_capacity(n),
        cumulative_events: Vec::with_capacity(n + 1),
        ledger_additions: 0,
        multiplications: 0,
    };
    let observe = |rt: &Runtime, run: &mut InputRun| {
        let acc = rt.accumulators();
        let r = readout(acc);
        run.frame_match.push(acc == expected);
        run.label_match
            .push(label.is_some_and(|l| r == Some(l as usize)));
        run.prediction_match.push(r == Some(predicted));
        run.cumulative_events.push(rt.ledger().events_emitted);
    };
    observe(&rt, &mut run);
    for group in stream.groups() {
        rt.feed(group);
        let spent = *rt
            .ledger()
            .per_input_event_additions
            .last()
            .expect("bucket opened by feed");
        run.additions.push(spent);
        observe(&rt, &mut run);
    }
    let out = rt.finish();
    run.ledger_additions = out.ledger.additions;
    run.multiplications = out.ledger.multiplications;
    if run.additions.iter().sum::<u64>() != run.ledger_additions {
        return Err(Error::invariant(
            "per-event additions do not sum to the ledger total",
        ));
    }
    Ok(run)
}

/// Runs every input and aggregates the curves. Input `i` is streamed in the
/// order drawn from `SeedStream::new(seed).derive_indexed("order", i)`.
pub fn curve_for_model(
    model: &Model,
    inputs: &[(Vec<i32>, Option<u8>)],
    seed: u64,
) -> Result<CurveSet> {
    let neuron_model = model
        .spec
        .uniform_activation()
        .map(NeuronModel::of)
        .ok_or_else(|| Error::InvalidArgument("network mixes activation kinds".into()))?;
    let net = Network::new(model.clone());
    let seeds = SeedStream::new(seed);
    let runs = inputs
        .iter()
        .enumerate()
        .map(|(i, (x, label))| run_input(&net, x, *label, seeds.derive_indexed("order", i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(neuron_model, seed, runs))
}

pub fn aggregate(model: NeuronModel, seed: u64, runs: Vec<InputRun>) -> CurveSet {
    let max_len = runs.iter().map(|r| r.num_events).max().unwrap_or(0);
    let count = runs.len().max(1) as f64;
    let mut classification = ClassificationCurve {
        frac_frame_match: Vec::with_capacity(max_len + 1),
        frac_label_match: Vec::with_capacity(max_len + 1),
        frac_prediction_match: Vec::with_capacity(max_len + 1),
    };
    let mut ops = OpsCurve {
        mean_adds_this_event: Vec::with_capacity(max_len + 1),
        active_inputs: Vec::with_capacity(max_len + 1),
        mean_cum_adds: Vec::with_capacity(max_len + 1),
        mean_cum_events: Vec::with_capacity(max_len + 1),
    };
    let mut cum: Vec<u64> = vec![0; runs.len()];
    for k in 0..=max_len {
        let at = |flags: &Vec<bool>| flags[k.min(flags.len() - 1)];
        let frac =
            |f: &dyn Fn(&InputRun) -> bool| runs.iter().filter(|r| f(r)).count() as f64 / count;
        classification
            .frac_frame_match
            .push(frac(&|r| at(&r.frame_match)));
        classification
            .frac_label_match
            .push(frac(&|r| at(&r.label_match)));
        classification
            .frac_prediction_match
            .push(frac(&|r| at(&r.prediction_match)));

        let (mut active, mut adds) = (0usize, 0u64);
        for (r, c) in runs.iter().zip(cum.iter_mut()) {
            if k >= 1 && k <= r.num_events {
                active += 1;
                adds += r.additions[k - 1];
                *c += r.additions[k - 1];
            }
        }
        ops.active_inputs.push(active);
        ops.mean_adds_this_event.push(if active > 0 {
            adds as f64 / active as f64
        } else {
            0.0
        });
        ops.mean_cum_adds
            .push(cum.iter().sum::<u64>() as f64 / count);
        let events: u64 = runs
            .iter()
            .map(|r| r.cumulative_events[k.min(r.num_events)])
            .sum();
        ops.mean_cum_events.push(events as f64 / count);
    }
    CurveSet {
        model,
        seed,
        classification,
        ops,
        runs,
    }
}

impl CurveSet {
    pub fn len(&self) -> usize {
        self.ops.mean_cum_adds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-input quartile means of additions per event, averaged over the
    /// inputs with at least four events.
    pub fn quartile_means(&self) -> Option<[f64; 4]> {
        let qs: Vec<[f64; 4]> = self
            .runs
            .iter()
            .filter_map(InputRun::quartile_means)
            .collect();
        if qs.is_empty() {
            return None;
        }
        let mut out = [0.0; 4];
        for q in &qs {
            for i in 0..4 {
                out[i] += q[i] / qs.len() as f64;
            }
        }
        Some(out)
    }

    /// Fraction of inputs whose accumulators match the frame output before
    /// their last event is consumed.
    pub fn early_frame_fraction(&self) -> f64 {
        early(&self.runs, InputRun::frame_settle)
    }

    /// Fraction of inputs whose readout matches the frame prediction for good
    /// before their last event is consumed.
    pub fn early_prediction_fraction(&self) -> f64 {
        early(&self.runs, InputRun::prediction_settle)
    }

    /// CSV with one row per event index (or per `bin` indices, averaged).
    pub fn write_csv<W: Write>(&self, mut out: W, bin: usize) -> std::io::Result<()> {
        let bin = bin.max(1);
        writeln!(
            out,
            "k,frac_frame_match,frac_label_match,mean_adds_this_event,mean_cum_adds"
        )?;
        let c = &self.classification;
        let o = &self.ops;
        let mut k = 0;
        while k < self.len() {
            let hi = (k + bin).min(self.len());
            let mean = |v: &[f64]| v[k..hi].iter().sum::<f64>() / (hi - k) as f64;
            writeln!(
                out,
                "{},{},{},{},{}",
                hi - 1,
                mean(&c.frac_frame_match),
                mean(&c.frac_label_match),
                mean(&o.mean_adds_this_event),
                o.mean_cum_adds[hi - 1],
            )?;
            k = hi;
        }
        Ok(())
    }
}

fn early(runs: &[InputRun], settle: fn(&InputRun) -> usize) -> f64 {
    if runs.is_empty() {
        return 0.0;
    }
    let n = runs.iter().filter(|r| settle(r) < r.num_events).count();
    n as f64 / runs.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Crossing {
    Reached {
        /// Interpolated event index.
        events: f64,
        mean_cum_adds: f64,
        mean_cum_network_events: f64,
    },
    NotReached {
        max_fraction: f64,
    },
}

impl Crossing {
    pub fn mean_cum_adds(&self) -> Option<f64> {
        match self {
            Crossing::Reached { mean_cum_adds, .. } => Some(*mean_cum_adds),
            Crossing::NotReached { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencySummary {
    pub model: NeuronModel,
    pub seed: u64,
    pub inputs: usize,
    /// `(fraction, crossing)` pairs for the frame-match curve.
    pub thresholds: Vec<(f64, Crossing)>,
    pub crossing_99: Crossing,
    pub terminal_fraction: f64,
    pub early_frame_fraction: f64,
    pub early_prediction_fraction: f64,
    pub quartile_means: Option<[f64; 4]>,
    pub mean_total_adds: f64,
    pub multiplications: u64,
}

/// Where the running maximum of `fraction` first reaches `target`, with
/// linear interpolation between the bracketing event indices.
pub fn crossing(fraction: &[f64], cum_adds: &[f64], cum_events: &[f64], target: f64) -> Crossing {
    let mut best = f64::NEG_INFINITY;
    let mut prev = f64::NEG_INFINITY;
    for (k, &f) in fraction.iter().enumerate() {
        let cur = best.max(f);
        if cur >= target {
            if k == 0 || prev >= target {
                return Crossing::Reached {
                    events: k as f64,
                    mean_cum_adds: cum_adds[k],
                    mean_cum_network_events: cum_events[k],
                };
            }
            let t = (target - prev) / (cur - prev);
            let lerp = |v: &[f64]| v[k - 1] + t * (v[k] - v[k - 1]);
            return Crossing::Reached {
                events: (k - 1) as f64 + t,
                mean_cum_adds: lerp(cum_adds),
                mean_cum_network_events: lerp(cum_events),
            };
        }
        best = cur;
        prev = cur;
    }
    Crossing::NotReached {
        max_fraction: best.max(0.0),
    }
}

pub fn efficiency_summary(curves: &CurveSet) -> EfficiencySummary {
    let f = &curves.classification.frac_frame_match;
    let o = &curves.ops;
    let at = |t| crossing(f, &o.mean_cum_adds, &o.mean_cum_events, t);
    EfficiencySummary {
        model: curves.model,
        seed: curves.seed,
        inputs: curves.runs.len(),
        thresholds: [0.5, 0.9, 0.95, 0.99, 1.0]
            .iter()
            .map(|&t| (t, at(t)))
            .collect(),
        crossing_99: at(0.99),
        terminal_fraction: f.last().copied().unwrap_or(0.0),
        early_frame_fraction: curves.early_frame_fraction(),
        early_prediction_fraction: curves.early_prediction_fraction(),
        quartile_means: curves.quartile_means(),
        mean_total_adds: o.mean_cum_adds.last().copied().unwrap_or(0.0),
        multiplications: curves.runs.iter().map(|r| r.multiplications).sum(),
    }
}
