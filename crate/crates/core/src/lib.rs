//! Integer-only counter-neuron networks.
//!
//! Networks with binary or discretized-ReLU activations and 8-bit integer
//! parameters are trained frame-by-frame with surrogate gradients
//! ([`train`]), then executed as asynchronous event-driven networks of
//! counter neurons ([`event`]) whose quiescent output equals the frame-based
//! forward pass ([`frame`]) exactly. The event path uses only additions and
//! comparisons, all of which are tallied in an [`OpLedger`].

pub mod arch;
pub mod data;
pub mod equivalence;
pub mod error;
pub mod event;
pub mod frame;
pub mod ledger;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod synapse;
pub mod train;
pub mod types;

pub use error::{Error, Result};
pub use event::{readout, run_stream, NeuronModel, RunOptions, Runtime, RuntimeOutput};
pub use ledger::OpLedger;
pub use model::{load_model, save_model};
pub use seed::SeedStream;
pub use synapse::{Network, SynapseTable};
pub use types::{
    ActivationKind, LayerKind, LayerParams, LayerSpec, Model, NetworkSpec, QuantizedParams,
};
