//! Event-driven execution with counter neurons.
//!
//! Every neuron holds an integer counter initialized at `-theta`. Basic
//! neurons (binary activation) emit `+1` when the counter becomes positive
//! and `-1` when it returns to zero or below. Extended neurons (discretized
//! ReLU) also keep an emission balance `z` and emit one event per completed
//! step of `lambda`, wrapping the counter back into `[0, lambda)`.
//!
//! Input events are consumed one timestep at a time. Weighted inputs
//! arriving at the same target within a timestep are summed before the
//! update. Every emission is queued and the queue is drained (FIFO) before
//! the next timestep is consumed, so activity cascades depth-first through
//! the layers. Output-layer emissions are summed into per-class
//! accumulators.
//!
//! All state arithmetic goes through [`OpLedger`], which tallies additions
//! and comparisons. No multiplication is performed on the data path.

use std::collections::VecDeque;
use std::io::Write;

use serde::Serialize;

use crate::data::{EventStream, InputEvent};
use crate::error::{Error, Result};
use crate::ledger::OpLedger;
use crate::synapse::Network;
use crate::types::ActivationKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Pos,
    Neg,
}

impl Sign {
    pub fn as_i32(self) -> i32 {
        match self {
            Sign::Pos => 1,
            Sign::Neg => -1,
        }
    }
}

/// Which counter neuron a network is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronModel {
    Basic,
    Extended,
}

impl NeuronModel {
    pub fn of(activation: ActivationKind) -> Self {
        match activation {
            ActivationKind::Binary => NeuronModel::Basic,
            ActivationKind::DiscretizedRelu { .. } => NeuronModel::Extended,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterState {
    pub c: Vec<i32>,
}

impl CounterState {
    pub fn new(theta: &[i8]) -> Self {
        CounterState {
            c: theta.iter().map(|&t| -(t as i32)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtendedCounterState {
    pub c: Vec<i32>,
    pub z: Vec<i32>,
}

impl ExtendedCounterState {
    pub fn new(theta: &[i8]) -> Self {
        ExtendedCounterState {
            c: theta.iter().map(|&t| -(t as i32)).collect(),
            z: vec![0; theta.len()],
        }
    }
}

/// A run of same-sign events emitted by one update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Burst {
    pub sign: Sign,
    pub count: u32,
}

/// Basic counter neuron update. Charged as one addition and two comparisons.
#[inline]
pub fn basic_update(
    state: &mut CounterState,
    neuron: usize,
    inp: i32,
    ledger: &mut OpLedger,
    layer: usize,
) -> Option<Sign> {
    let prev = state.c[neuron];
    let c = ledger.add(layer, prev, inp);
    state.c[neuron] = c;
    ledger.compare(2);
    if prev <= 0 && c > 0 {
        Some(Sign::Pos)
    } else if prev > 0 && c <= 0 {
        Some(Sign::Neg)
    } else {
        None
    }
}

/// Extended counter neuron update. Charged as one addition for the input,
/// one per emission (the `lambda` wrap) and one comparison per loop test.
#[inline]
pub fn extended_update(
    state: &mut ExtendedCounterState,
    neuron: usize,
    lambda: i32,
    inp: i32,
    ledger: &mut OpLedger,
    layer: usize,
) -> Option<Burst> {
    let mut c = ledger.add(layer, state.c[neuron], inp);
    let mut z = state.z[neuron];
    let mut up = 0u32;
    loop {
        ledger.compare(1);
        if c < lambda {
            break;
        }
        c = ledger.sub(layer, c, lambda);
        z += 1;
        up += 1;
    }
    let mut down = 0u32;
    loop {
        ledger.compare(1);
        if !(z > 0 && c < 0) {
            break;
        }
        c = ledger.add(layer, c, lambda);
        z -= 1;
        down += 1;
    }
    state.c[neuron] = c;
    state.z[neuron] = z;
    debug_assert!(up == 0 || down == 0);
    if up > 0 {
        Some(Burst {
            sign: Sign::Pos,
            count: up,
        })
    } else if down > 0 {
        Some(Burst {
            sign: Sign::Neg,
            count: down,
        })
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerState {
    Basic(CounterState),
    Extended {
        lambda: i32,
        state: ExtendedCounterState,
    },
}

impl LayerState {
    fn new(activation: ActivationKind, theta: &[i8]) -> Self {
        match activation {
            ActivationKind::Binary => LayerState::Basic(CounterState::new(theta)),
            ActivationKind::DiscretizedRelu { lambda } => LayerState::Extended {
                lambda: lambda as i32,
                state: ExtendedCounterState::new(theta),
            },
        }
    }

    pub fn counters(&self) -> &[i32] {
        match self {
            LayerState::Basic(s) => &s.c,
            LayerState::Extended { state, .. } => &state.c,
        }
    }

    /// Emission balance `z` of extended neurons.
    pub fn balance(&self) -> Option<&[i32]> {
        match self {
            LayerState::Basic(_) => None,
            LayerState::Extended { state, .. } => Some(&state.z),
        }
    }
}

/// An event emitted by neuron `unit` of neuron layer `layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InternalEvent {
    pub layer: u32,
    pub unit: u32,
    pub sign: Sign,
}

/// One row of an event trace. Layer 0 is the input; neuron layer `k` is
/// reported as layer `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRow {
    pub t: u64,
    pub layer: u32,
    pub unit: u32,
    pub sign: i8,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "timestep,layer,unit,sign")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.t, r.layer, r.unit, r.sign)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub trace: bool,
}

#[derive(Debug, Clone)]
pub struct RuntimeOutput {
    pub accumulators: Vec<i32>,
    pub ledger: OpLedger,
    pub trace: Option<Vec<TraceRow>>,
    /// Final neuron state per layer.
    pub states: Vec<LayerState>,
    /// Positive and negative emissions per neuron, per layer.
    pub emissions: Vec<Vec<(u32, u32)>>,
}

/// A stateful event-driven execution of one network.
pub struct Runtime<'n> {
    net: &'n Network,
    states: Vec<LayerState>,
    emissions: Vec<Vec<(u32, u32)>>,
    queue: VecDeque<InternalEvent>,
    accumulators: Vec<i32>,
    ledger: OpLedger,
    trace: Option<Vec<TraceRow>>,
    pending: Vec<i32>,
    marked: Vec<bool>,
    touched: Vec<u32>,
    now: u64,
}

impl<'n> Runtime<'n> {
    pub fn new(net: &'n Network, options: RunOptions) -> Self {
        let model = &net.model;
        let states = model
            .spec
            .layers
            .iter()
            .zip(&model.params.layers)
            .map(|(l, p)| LayerState::new(l.activation, &p.theta))
            .collect();
        let emissions = model
            .spec
            .layers
            .iter()
            .map(|l| vec![(0, 0); l.out_size()])
            .collect();
        Runtime {
            net,
            states,
            emissions,
            queue: VecDeque::new(),
            accumulators: vec![0; model.spec.num_classes()],
            ledger: OpLedger::new(model.num_layers()),
            trace: options.trace.then(Vec::new),
            pending: vec![0; model.spec.layers[0].out_size()],
            marked: vec![false; model.spec.layers[0].out_size()],
            touched: Vec::new(),
            now: 0,
        }
    }

    pub fn accumulators(&self) -> &[i32] {
        &self.accumulators
    }

    pub fn ledger(&self) -> &OpLedger {
        &self.ledger
    }

    pub fn states(&self) -> &[LayerState] {
        &self.states
    }

    /// Applies `inp` to neuron `unit` of `layer` and queues any emissions.
    #[inline]
    fn update(&mut self, layer: usize, unit: usize, inp: i32) {
        let emitted = match &mut self.states[layer] {
            LayerState::Basic(s) => basic_update(s, unit, inp, &mut self.ledger, layer)
                .map(|sign| Burst { sign, count: 1 }),
            LayerState::Extended { lambda, state } => {
                extended_update(state, unit, *lambda, inp, &mut self.ledger, layer)
            }
        };
        let Some(Burst { sign, count }) = emitted else {
            return;
        };
        let last = layer + 1 == self.states.len();
        for _ in 0..count {
            self.ledger.emit(layer);
            let slot = &mut self.emissions[layer][unit];
            match sign {
                Sign::Pos => slot.0 += 1,
                Sign::Neg => slot.1 += 1,
            }
            if let Some(trace) = &mut self.trace {
                trace.push(TraceRow {
                    t: self.now,
                    layer: layer as u32 + 1,
                    unit: unit as u32,
                    sign: sign.as_i32() as i8,
                });
            }
            if last {
                // readout counter, outside the network's cost model
                self.accumulators[unit] += sign.as_i32();
            } else {
                self.queue.push_back(InternalEvent {
                    layer: layer as u32,
                    unit: unit as u32,
                    sign,
                });
            }
        }
    }

    /// Delivers every event of one timestep, then drains the cascade.
    pub fn feed(&mut self, group: &[InputEvent]) {
        self.ledger.begin_input_event();
        if let Some(first) = group.first() {
            self.now = first.t;
        }
        if let Some(trace) = &mut self.trace {
            trace.extend(group.iter().map(|e| TraceRow {
                t: e.t,
                layer: 0,
                unit: e.unit,
                sign: e.sign,
            }));
        }
        let net = self.net;
        let table = &net.tables[0];
        if let [event] = group {
            let (targets, weights) = table.row(event.unit as usize);
            for (&t, &w) in targets.iter().zip(weights) {
                let inp = if event.sign > 0 { w } else { -w };
                self.update(0, t as usize, inp);
            }
        } else {
            for event in group {
                let (targets, weights) = table.row(event.unit as usize);
                for (&t, &w) in targets.iter().zip(weights) {
                    let t = t as usize;
                    let p = self.pending[t];
                    if !self.marked[t] {
                        self.marked[t] = true;
                        self.touched.push(t as u32);
                    }
                    self.pending[t] = if event.sign > 0 {
                        self.ledger.add(0, p, w)
                    } else {
                        self.ledger.sub(0, p, w)
                    };
                }
            }
            let touched = std::mem::take(&mut self.touched);
            for &t in &touched {
                let inp = std::mem::take(&mut self.pending[t as usize]);
                self.marked[t as usize] = false;
                self.update(0, t as usize, inp);
            }
            self.touched = touched;
            self.touched.clear();
        }
        self.drain();
    }

    fn drain(&mut self) {
        let net = self.net;
        while let Some(ev) = self.queue.pop_front() {
            let next = ev.layer as usize + 1;
            let (targets, weights) = net.tables[next].row(ev.unit as usize);
            for (&t, &w) in targets.iter().zip(weights) {
                let inp = match ev.sign {
                    Sign::Pos => w,
                    Sign::Neg => -w,
                };
                self.update(next, t as usize, inp);
            }
        }
    }

    pub fn finish(self) -> RuntimeOutput {
        RuntimeOutput {
            accumulators: self.accumulators,
            ledger: self.ledger,
            trace: self.trace,
            states: self.states,
            emissions: self.emissions,
        }
    }
}

/// Runs a whole stream to quiescence.
pub fn run_stream(
    net: &Network,
    stream: &EventStream,
    model: NeuronModel,
    options: RunOptions,
) -> Result<RuntimeOutput> {
    let spec = &net.model.spec;
    if stream.input_size != spec.input_size() {
        return Err(Error::shape(format!(
            "stream addresses {} inputs, network has {}",
            stream.input_size,
            spec.input_size()
        )));
    }
    if let Some(k) = spec
        .layers
        .iter()
        .position(|l| NeuronModel::of(l.activation) != model)
    {
        return Err(Error::InvalidArgument(format!(
            "layer {k} does not use the {model:?} neuron model"
        )));
    }
    stream.validate()?;
    let mut rt = Runtime::new(net, options);
    for group in stream.groups() {
        rt.feed(group);
    }
    Ok(rt.finish())
}

/// Winning class, or `None` when the maximum is shared or not positive.
pub fn readout(accumulators: &[i32]) -> Option<usize> {
    let max = *accumulators.iter().max()?;
    if max <= 0 {
        return None;
    }
    let mut winners = accumulators.iter().enumerate().filter(|(_, &a)| a == max);
    let (best, _) = winners.next()?;
    winners.next().is_none().then_some(best)
}
