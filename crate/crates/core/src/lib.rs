//! Binary-weight spiking neural networks.
//!
//! Trains bias-less, batch-norm-free networks whose hidden layers carry
//! binarized weights, converts them into integrate-and-fire spiking networks
//! by threshold balancing, simulates event-driven inference on bit-packed
//! spike vectors, and reports operation-count energy proxies.

pub mod tensor;
pub mod graph;
pub mod train;
pub mod synth;
pub mod convert;
pub mod spikesim;
pub mod metrics;
