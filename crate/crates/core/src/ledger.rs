//! Operation accounting.
//!
//! The ledger is also the arithmetic unit of the event-driven data path: the
//! counter neurons update their state only through [`OpLedger::add`],
//! [`OpLedger::sub`] and [`OpLedger::compare`], so every operation they
//! perform is tallied. `multiplications` counts host multiplies and must stay
//! at zero for event-driven runs.

use serde::Serialize;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct OpLedger {
    pub additions: u64,
    pub comparisons: u64,
    pub events_emitted: u64,
    pub multiplications: u64,
    /// Additions attributed to each input event (or simultaneous group).
    pub per_input_event_additions: Vec<u64>,
    /// Additions performed on the state of each neuron layer.
    pub per_layer_additions: Vec<u64>,
    /// Events emitted by each neuron layer.
    pub per_layer_events: Vec<u64>,
}

impl OpLedger {
    pub fn new(num_layers: usize) -> Self {
        OpLedger {
            per_layer_additions: vec![0; num_layers],
            per_layer_events: vec![0; num_layers],
            ..Default::default()
        }
    }

    /// Opens a new per-input-event bucket; subsequent additions land in it.
    pub fn begin_input_event(&mut self) {
        self.per_input_event_additions.push(0);
    }

    #[inline]
    fn charge(&mut self, layer: usize, n: u64) {
        self.additions += n;
        self.per_layer_additions[layer] += n;
        if let Some(bucket) = self.per_input_event_additions.last_mut() {
            *bucket += n;
        }
    }

    /// `a + b`, charged as one addition. Traps on overflow in debug builds.
    #[inline]
    pub fn add(&mut self, layer: usize, a: i32, b: i32) -> i32 {
        self.charge(layer, 1);
        a + b
    }

    /// `a - b`, charged as one addition.
    #[inline]
    pub fn sub(&mut self, layer: usize, a: i32, b: i32) -> i32 {
        self.charge(layer, 1);
        a - b
    }

    /// Charges `n` additions without performing them (cost-model bookkeeping
    /// for the frame-based pass, where an input of value `v` stands for `v`
    /// repeated additions).
    #[inline]
    pub fn charge_additions(&mut self, layer: usize, n: u64) {
        self.charge(layer, n);
    }

    /// `a * b`, counted as a host multiplication.
    #[inline]
    pub fn mul(&mut self, a: i32, b: i32) -> i32 {
        self.multiplications += 1;
        a * b
    }

    #[inline]
    pub fn compare(&mut self, n: u64) {
        self.comparisons += n;
    }

    #[inline]
    pub fn emit(&mut self, layer: usize) {
        self.events_emitted += 1;
        self.per_layer_events[layer] += 1;
    }

    /// Checks the internal consistency of the counters.
    pub fn is_consistent(&self) -> bool {
        let per_event: u64 = self.per_input_event_additions.iter().sum();
        let per_layer: u64 = self.per_layer_additions.iter().sum();
        let events: u64 = self.per_layer_events.iter().sum();
        per_layer == self.additions
            && events == self.events_emitted
            && (self.per_input_event_additions.is_empty() || per_event == self.additions)
    }
}
