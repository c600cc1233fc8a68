//! Scrapbook memory: consolidates timestamped personal records into per-day page
//! rasters, indexes them with an episodic memory graph, ages them with staged
//! lossy degradation, and evaluates retrieval and answers.

pub mod chat;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod emgraph;
pub mod eval;
pub mod error;
pub mod forgetting;
pub mod pagebuilder;
pub mod perception;
pub mod pipeline;
pub mod retrieval;
pub mod store;
pub mod synth;
pub mod util;
pub mod video;

pub use error::{Error, Result};
