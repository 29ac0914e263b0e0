//! Desk-scale multimodal world model for closed-loop 2D driving.
//!
//! The crate wires four tokenizers (images, text, scalars, actions) into a
//! single vocabulary, trains a small decoder-only transformer on interleaved
//! observation/description/action frames produced by a synthetic top-down
//! driving simulator, and evaluates it with planning and language metrics in
//! open- and closed-loop rollouts.

pub mod actiontok;
pub mod cli;
pub mod config;
pub mod error;
pub mod imgtok;
pub mod metrics;
pub mod model;
pub mod numtok;
pub mod rollout;
pub mod seq;
pub mod texttok;
pub mod world;

pub use error::{Error, Result};
