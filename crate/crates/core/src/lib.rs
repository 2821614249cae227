//! Cycle-consistent partial multi-graph matching through learned universe
//! embeddings.
//!
//! Each graph is matched to a shared set of latent universe points; pairwise
//! matchings are products of those object-to-universe assignments and are
//! therefore cycle-consistent for any model parameters.

pub mod assignment;
pub mod diff;
pub mod geometry;
pub mod matching;
pub mod model;
pub mod synth;
pub mod train;
