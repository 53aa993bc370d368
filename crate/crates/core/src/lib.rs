//! Latent-space comparison of two embedding datasets.
//!
//! The pipeline encodes both point clouds with a sparse autoencoder, scores
//! every neuron by the Jensen-Shannon divergence between its activation
//! histograms in the two datasets, labels the most divergent neurons with
//! vocabulary words, and merges those hypotheses with ones derived from a
//! density-ratio classifier's most discriminative samples.

pub mod bench;
pub mod cli;
pub mod divergence;
pub mod dre;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod labels;
pub mod sae;
pub mod store;
pub mod synth;
pub mod text_table;

use serde::{Deserialize, Serialize};

pub use error::{Error, Result};

/// Which dataset a concept is over-represented in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    A,
    B,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::A => Direction::B,
            Direction::B => Direction::A,
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::A => "A",
            Direction::B => "B",
        })
    }
}
