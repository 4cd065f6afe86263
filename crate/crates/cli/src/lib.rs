//! Experiment driver: configuration, pipeline stages, curve and scatter
//! export. The `pco` binary is a thin clap front end over [`pipeline`].

pub mod config;
pub mod curves;
pub mod pipeline;
pub mod plot;

pub use config::{GtSource, RunConfig};
pub use pipeline::{run_pipeline, RunReport};
