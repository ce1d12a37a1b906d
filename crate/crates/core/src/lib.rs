//! Zone-level claim-frequency modelling with geographic features.

pub mod aggregate;
pub mod error;
pub mod eval;
pub mod features;
pub mod geo;
pub mod ingest;
pub mod models;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
