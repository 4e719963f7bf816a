//! Text clustering driven entirely by a language model.
//!
//! Stage 1 proposes candidate labels over mini-batches of documents, pools
//! them and asks the model to merge near-duplicates. Stage 2 classifies every
//! document against the merged label set. The resulting partition is scored
//! against gold labels with Hungarian-matched accuracy, NMI and ARI.

pub mod dataset;
pub mod error;
pub mod exec;
pub mod llm;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod prompt;
pub mod runner;

pub use error::*;
pub use model::*;
