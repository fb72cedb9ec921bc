//! Multipath-assisted MIMO channel extrapolation.
//!
//! Synthetic channel generation, a CSI-to-PDP auto-encoder, multipath
//! features, and a dual-branch masked auto-encoder that fills in unknown
//! antenna pairs, together with the training loops and evaluation harness
//! behind the `chanex` binary.

pub mod c2p;
pub mod channel;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod features;
pub mod harness;
pub mod masking;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
