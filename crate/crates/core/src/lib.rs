//! Malware detection in encrypted network traffic without decryption.
//!
//! The pipeline reads classic pcap captures, rebuilds bidirectional TCP flows,
//! extracts handshake, timing, length and Markov-chain features, trains tree
//! ensembles (random forest, gradient boosting, extra trees) and explains every
//! prediction with exact path-dependent TreeSHAP attributions.
//!
//! ```text
//! capture -> flow -> tls -> features -> dataset -> model -> explain
//! ```

pub mod capture;
pub mod config;
pub mod craft;
pub mod dataset;
pub mod explain;
pub mod features;
pub mod flow;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod tls;

mod error;
mod par;
mod time;

pub use error::{Error, Result};
pub use time::Timestamp;

/// Tool version embedded in every artifact's provenance block.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
