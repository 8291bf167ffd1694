//! Distant transfer learning by deep random walks.
//!
//! A feature extractor embeds source, auxiliary and target instances; each
//! mini-batch becomes a similarity graph with no source-target edges, and
//! random walks over that graph supply the sequences for three losses:
//! adjacent-node similarity, reconstruction of the walk's end point by a
//! bidirectional LSTM, and a similarity-weighted classification loss.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod graph;
pub mod losses;
pub mod nets;
pub mod optim;
pub mod paths;
pub mod rng;
pub mod sweep;
pub mod trainer;
pub mod walker;

pub use error::{Error, Result};
