//! Detection-gated retrieval augmented generation.
//!
//! The engine decides *when* to retrieve by watching the model itself: an
//! RNN classifies the attribution profile of a question before generation
//! starts, and an MLP classifies every generated token as it appears. It
//! decides *what* to retrieve by ranking candidate keywords, selecting
//! documents stepwise in shrinking batches, and re-chunking the winners
//! into coherent blocks before they are spliced into the prompt.
//!
//! File formats, the HTTP model protocol and the CLI are described in the
//! repository README.

pub mod adapter;
pub mod attribution;
pub mod config;
pub mod detectors;
pub mod error;
pub mod eval;
pub mod files;
pub mod index;
pub mod orchestrator;
pub mod retrieval;
pub mod text;
pub mod types;

mod hash;

pub use config::EngineConfig;
pub use error::{Error, Result};
