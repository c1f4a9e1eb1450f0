//! Weakly-supervised grounding of subject-predicate-object relations in
//! videos: region-graph encoder, reconstruction decoder, training loop,
//! trajectory linking, evaluation and a synthetic scene generator.

pub mod datamodel;
pub mod decoder;
pub mod encoder;
mod error;
pub mod evalkit;
pub mod grounding;
pub mod model;
pub mod numerics;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
