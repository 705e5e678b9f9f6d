//! Failure prediction for batch-scheduled HPC jobs.
//!
//! The crate covers the whole pipeline: a trace model and CSV reader/writer,
//! a synthetic trace generator, job encoders, six predictors, metrics and
//! an evaluation harness for offline and online (rolling) settings.

pub mod encoding;
pub mod eval;
pub mod generator;
pub mod harness;
pub mod io;
pub mod learners;
pub mod report;
pub mod trace;
