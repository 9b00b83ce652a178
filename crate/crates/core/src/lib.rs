//! Two-point voltage fingerprinting for CAN buses: frame codec, resistive bus
//! model, waveform acquisition, feature extraction, random forest sender
//! identification, masquerade attacks and evaluation.

pub mod acquisition;
pub mod attack;
pub mod bus;
pub mod can;
pub mod config;
pub mod eval;
pub mod features;
pub mod forest;
pub mod pipeline;
pub mod seed;
