//! Signal-level intrusion detection for CAN traffic.
//!
//! Decoded signals are forward-filled into a message-indexed queue, sampled at
//! several periods into fixed-size images, reconstructed by one convolutional
//! autoencoder per period, and the reconstruction losses are scored against
//! three tiers of percentile thresholds to decide whether a window is under
//! attack.

pub mod ingest;
pub mod preprocess;
pub mod model;
pub mod detect;
pub mod attackgen;
pub mod eval;
pub mod pipeline;
pub mod cli;
