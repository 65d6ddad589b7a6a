//! Weight pruning driven by activation statistics.
//!
//! A small dense classifier is trained from scratch, every weight is scored by
//! the distribution of its relative contribution to the output of the node it
//! feeds, and the lowest-scoring weights are removed in rounds with a short
//! fine-tune after each round. Magnitude, Wanda and random scorers are
//! provided for comparison, along with histogram entropy / mutual information
//! diagnostics and blind-range occupancy measurements.

pub mod dataset;
pub mod error;
pub mod infometrics;
pub mod network;
pub mod numerics;
pub mod pruner;
pub mod scoring;
pub mod stats;

pub use error::{Error, Result};
