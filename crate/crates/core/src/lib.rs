//! Latent socioeconomic scaling of users and brands from a bipartite
//! "user follows brand" graph.
//!
//! The crate covers loading and filtering follow data, correspondence
//! analysis on the resulting sparse binary matrix, supplementary projection
//! and standardization of scores, a validation statistics battery, and a
//! synthetic data generator with known latent positions.

pub mod ca;
pub mod filter;
pub mod ingest;
pub mod pipeline;
pub mod score;
pub mod stats;
pub mod synth;
