//! Experiment configuration, runs and table reproduction on MNIST.

pub mod config;
pub mod error;
pub mod experiment;
pub mod reproduce;
pub mod tables;

pub use config::{Activation, ExperimentConfig, Method};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, train_baseline, write_outputs, BaselineCache, ExperimentOutcome, Mnist};
pub use reproduce::{reproduce_table, table_cells, Reproduction};
pub use tables::{emit_tables, parse_rows, ResultsRow};
