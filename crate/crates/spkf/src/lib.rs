//! File formats, EEG ingestion and the batch pipeline around `spkf-core`:
//! EDF recordings, the `SPKT` tensor container, checkpoints, CSV reports
//! and the `spkf` command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod container;
pub mod dataset;
pub mod edf;
pub mod error;
pub mod fixture;
pub mod pipeline;
pub mod tables;

pub use error::{Error, Result};
