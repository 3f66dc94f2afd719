//! Cover song retrieval from dominant-melody embeddings.
//!
//! The pipeline: a constant-Q front end produces dominant-melody salience
//! matrices, which are trimmed and resized to a fixed 1024x36 input. A
//! five-block convolutional encoder maps each input to an L2-normalized
//! embedding, trained with a semi-hard-mined triplet loss so covers of the
//! same work cluster together. Retrieval is an exact Euclidean scan over a
//! persistent embedding store, evaluated with the usual ranking and
//! distribution-separation metrics.
//!
//! Hot loops run data-parallel under rayon by default; building with
//! `--no-default-features` swaps in sequential fallbacks with identical
//! results.

pub mod binio;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod frontend;
pub mod mat;
pub mod metrics;
pub mod nncore;
pub mod par;
pub mod preprocess;
pub mod store;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
