//! Desk-scale laboratory for continual compositional generalization on
//! synthetic natural language inference.
//!
//! The pipeline: build a pseudo-word lexicon, synthesize primitive
//! veridical and lexical-relation inferences, compose them into nine
//! types of compositional inference, split by held-out type, arrange
//! training streams (single-stage, two-stage, or curriculum), train a
//! small multi-task classifier with optional forgetting mitigation, and
//! evaluate accuracy, forgetting, and primitive-vs-compositional
//! breakdowns across seeds and folds.

pub mod algebra;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod io;
pub mod lexicon;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod report;
pub mod runner;
pub mod split;
pub mod strategy;
pub mod stream;
pub mod trainer;
pub mod synth;
pub mod util;

pub use error::{Error, Result};
