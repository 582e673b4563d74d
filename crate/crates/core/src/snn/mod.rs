//! Leaky integrate-and-fire dynamics and time-unrolled network evaluation.

mod forward;
mod lif;
mod spec;

pub use forward::{encode_input, ForwardOptions, ForwardRecord, Input, Network, Unroll};
pub use lif::{lif_step, reset_state, spike_fire, LifState, SpikeMode};
pub use spec::{Layer, LayerPlan, LifParams, NetworkSpec, Params, Plan};
