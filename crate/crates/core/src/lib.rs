//! Privacy-preserving graph similarity learning.
//!
//! Two graphs held on separate devices are compared without either device
//! revealing node-level representations: each side encodes its graph
//! locally, exchanges a small set of context-attentive graph summaries, and
//! sends out only an LSTM-fused "obfuscated" vector for scoring. The crate
//! also provides the baselines the model is compared against, a
//! deterministic two-party session simulator that records everything that
//! crosses the device boundary, and a black-box property-inference attack
//! used to measure how much each model leaks.

pub mod attack;
pub mod error;
pub mod graphs;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod protocol;
pub mod rng;

pub use error::{Error, Result};
