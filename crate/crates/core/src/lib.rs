//! One-shot voice conversion with a vector-quantized auto-encoder.
//!
//! An encoder maps log-mel frames to a continuous latent sequence. A learnable
//! codebook quantizes each latent frame; the quantized sequence is the
//! *content* and the time-mean of the quantization residual is the *speaker*
//! vector. The decoder rebuilds frames from content plus speaker, so
//! converting speech means decoding the source's content with the target's
//! speaker vector.
//!
//! Training draws triplets: two utterances of one speaker and one of another.
//! The two same-speaker utterances are rebuilt with each other's speaker
//! vectors, same-speaker vectors are pulled together and the third speaker's
//! vector is pushed away. See [`training`] and [`losses`].

pub mod audio;
pub mod autodiff;
pub mod cache;
pub mod config;
pub mod conversion;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod synthetic;
pub mod training;
mod util;
pub mod vq;

pub use error::{Error, Result};
pub use util::atomic_write;
